import pytest

from depthprompt.harness.config import RunConfig, SplitSpec
from depthprompt.harness.training import open_corpus, pretrain_foundation
from depthprompt.sensors import SceneSpec

TINY_SPLITS = {
    "pretrain": SplitSpec(100_000, 32),
    "train": SplitSpec(200_000, 8),
    "val": SplitSpec(300_000, 4),
    "test": SplitSpec(400_000, 6),
}


@pytest.fixture(scope="session")
def tiny_config(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    return RunConfig(corpus=str(root / "corpus"), splits=TINY_SPLITS, scene=SceneSpec(height=16, width=24),
                     epochs=1, batch_size=4, pretrain_epochs=2, pretrain_batch_size=8,
                     checkpoint=str(root / "ckpt"), foundation_checkpoint=str(root / "foundation"))


@pytest.fixture(scope="session")
def tiny_corpus(tiny_config):
    return open_corpus(tiny_config)


@pytest.fixture(scope="session")
def pretrained(tiny_config, tiny_corpus):
    return pretrain_foundation(tiny_config, tiny_corpus, out=tiny_config.foundation_checkpoint)
