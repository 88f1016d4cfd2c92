import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from modelserver.seq2seq import load_pairs, save_checkpoint, train_reasoner
from modelserver.server import ServerConfig, create_app

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def wire_schema():
    return json.loads((FIXTURES / "wire_schema.json").read_text())


@pytest.fixture(scope="session")
def toy_pairs():
    return load_pairs(FIXTURES / "toy_pairs.jsonl")


@pytest.fixture(scope="session")
def reasoner_checkpoint(toy_pairs, tmp_path_factory):
    # overfit the toy corpus so greedy decoding yields fluent continuations;
    # the default lr=1e-4 is exercised separately in the trend test
    model, vocab, losses = train_reasoner(toy_pairs, epochs=300, lr=3e-3,
                                          seed=0, emb_dim=48, hidden=96)
    assert losses[-1] < losses[0]
    path = tmp_path_factory.mktemp("ckpt") / "reasoner.pt"
    save_checkpoint(path, model, vocab)
    return str(path)


@pytest.fixture(scope="session")
def client(reasoner_checkpoint):
    app = create_app(ServerConfig(generator_model=reasoner_checkpoint,
                                  checker_model="builtin",
                                  scorer_model="builtin"))
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


@pytest.fixture(scope="session")
def checker_only_client():
    app = create_app(ServerConfig(checker_model="builtin"))
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c
