import numpy as np
import pytest

from wac import composition, scenegen
from wac.classifiers import AdamConfig, TrainConfig
from wac.model import SamplingConfig, train_model

# Fast settings for unit tests; the acceptance suite uses the full protocol.
FAST_TRAIN = TrainConfig(
    max_epochs=500,
    adam=AdamConfig(learning_rate=0.01),
    l2_alpha=0.01,
    seed=1,
)


@pytest.fixture(scope="session")
def gen_lexicons():
    return scenegen.parser_lexicons(scenegen.GenLexicon())


@pytest.fixture(scope="session")
def small_train():
    return scenegen.generate_dataset(
        scenegen.GenConfig(n_scenes=150, seed=5, relation_fraction=0.3)
    )


@pytest.fixture(scope="session")
def small_test():
    return scenegen.generate_dataset(
        scenegen.GenConfig(n_scenes=60, seed=5, relation_fraction=0.3, scene_offset=150),
        split="test",
    )


@pytest.fixture(scope="session")
def mlp_model(small_train, gen_lexicons):
    model = train_model(
        small_train, "mlp", SamplingConfig(seed=2), FAST_TRAIN, gen_lexicons
    )
    composition.train_relational(model, small_train)
    return model


@pytest.fixture(scope="session")
def logreg_model(small_train, gen_lexicons):
    return train_model(
        small_train, "logreg", SamplingConfig(seed=2), FAST_TRAIN, gen_lexicons
    )


@pytest.fixture(scope="session")
def tree_model(small_train, gen_lexicons):
    return train_model(
        small_train, "tree", SamplingConfig(seed=2), FAST_TRAIN, gen_lexicons
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
