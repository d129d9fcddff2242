import numpy as np
import pytest

from speechmime.corpus import default_grammar, gen_toy_corpus
from speechmime.evalbench import build_families, load_role_templates
from speechmime.pretrain import build_default_tokenizer
from speechmime.synth import SynthConfig
from speechmime.tasks import load_task_config


@pytest.fixture(scope="session")
def grammar():
    return default_grammar(11)


@pytest.fixture(scope="session")
def task_cfg():
    return load_task_config()


@pytest.fixture(scope="session")
def families(grammar):
    return build_families(grammar)


@pytest.fixture(scope="session")
def role_templates():
    return load_role_templates()


@pytest.fixture(scope="session")
def tokenizer(grammar, task_cfg, families, role_templates):
    return build_default_tokenizer(grammar, task_cfg, families, role_templates)


@pytest.fixture(scope="session")
def synth_cfg():
    return SynthConfig()


@pytest.fixture(scope="session")
def small_manifest(grammar):
    # 60 utterances: 54 train / 3 held-in / 3 held-out
    return gen_toy_corpus(grammar, 60)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(1234))
