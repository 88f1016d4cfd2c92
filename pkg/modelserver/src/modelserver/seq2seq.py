"""A small word-level GRU seq2seq used for the generator/reasoner role.

Trained from scratch on exported reasoner pairs ({"input", "target"}
records); greedy decoding keeps the served route deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import torch
from torch import nn

PAD, BOS, EOS, UNK = 0, 1, 2, 3
_SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>"]
_TOKEN_RE = re.compile(r"[a-z0-9]+|[.,;]")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: list[str]) -> str:
    out = ""
    for tok in tokens:
        if tok in ".,;":
            out += tok
        else:
            out += (" " if out else "") + tok
    if out:
        out = out[0].upper() + out[1:]
    return out


@dataclass
class Vocab:
    words: list[str] = field(default_factory=lambda: list(_SPECIALS))

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def build(cls, texts) -> "Vocab":
        seen = dict.fromkeys(tok for text in texts for tok in tokenize(text))
        return cls(list(_SPECIALS) + sorted(seen))

    def __len__(self):
        return len(self.words)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(tok, UNK) for tok in tokenize(text)]

    def decode(self, ids) -> str:
        return detokenize([self.words[i] for i in ids
                           if i not in (PAD, BOS, EOS)])


class Seq2Seq(nn.Module):
    def __init__(self, vocab_size: int, emb_dim: int = 64, hidden: int = 128):
        super().__init__()
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.embed = nn.Embedding(vocab_size, emb_dim, padding_idx=PAD)
        self.encoder = nn.GRU(emb_dim, hidden, batch_first=True)
        self.decoder = nn.GRU(emb_dim, hidden, batch_first=True)
        self.out = nn.Linear(hidden, vocab_size)

    def encode(self, src: torch.Tensor) -> torch.Tensor:
        _, state = self.encoder(self.embed(src))
        return state

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        state = self.encode(src)
        hidden, _ = self.decoder(self.embed(tgt_in), state)
        return self.out(hidden)

    @torch.no_grad()
    def greedy_decode(self, src_ids: list[int], max_tokens: int = 64) -> list[int]:
        self.eval()
        src = torch.tensor([src_ids or [UNK]], dtype=torch.long)
        state = self.encode(src)
        token = torch.tensor([[BOS]], dtype=torch.long)
        out: list[int] = []
        for _ in range(max_tokens):
            hidden, state = self.decoder(self.embed(token), state)
            token = self.out(hidden[:, -1]).argmax(-1, keepdim=True)
            tok = int(token)
            if tok == EOS:
                break
            out.append(tok)
        return out


def load_pairs(path) -> list[tuple[str, str]]:
    """Read exported reasoner pairs, skipping header/underscore records."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if any(k.startswith("_") for k in record):
                continue
            pairs.append((record["input"], record["target"]))
    return pairs


def _batchify(vocab: Vocab, pairs, device):
    src = [torch.tensor(vocab.encode(s), dtype=torch.long) for s, _ in pairs]
    tgt = [torch.tensor([BOS] + vocab.encode(t) + [EOS], dtype=torch.long)
           for _, t in pairs]
    src = nn.utils.rnn.pad_sequence(src, batch_first=True, padding_value=PAD)
    tgt = nn.utils.rnn.pad_sequence(tgt, batch_first=True, padding_value=PAD)
    return src.to(device), tgt.to(device)


def train_reasoner(pairs, epochs: int = 30, lr: float = 1e-4, seed: int = 0,
                   emb_dim: int = 64, hidden: int = 128, batch_size: int = 16,
                   device: str = "cpu"):
    """Train the toy reasoner; returns (model, vocab, per-epoch mean losses)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no training pairs")
    torch.manual_seed(seed)
    vocab = Vocab.build([t for pair in pairs for t in pair])
    model = Seq2Seq(len(vocab), emb_dim, hidden).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss(ignore_index=PAD)

    losses = []
    model.train()
    for _ in range(epochs):
        total, batches = 0.0, 0
        for start in range(0, len(pairs), batch_size):
            src, tgt = _batchify(vocab, pairs[start:start + batch_size], device)
            logits = model(src, tgt[:, :-1])
            loss = loss_fn(logits.reshape(-1, logits.shape[-1]),
                           tgt[:, 1:].reshape(-1))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item()
            batches += 1
        losses.append(total / batches)
    return model, vocab, losses


def save_checkpoint(path, model: Seq2Seq, vocab: Vocab) -> None:
    torch.save({
        "vocab": vocab.words,
        "emb_dim": model.emb_dim,
        "hidden": model.hidden,
        "state": model.state_dict(),
    }, path)


def load_checkpoint(path, device: str = "cpu") -> tuple[Seq2Seq, Vocab]:
    blob = torch.load(path, map_location=device, weights_only=True)
    vocab = Vocab(blob["vocab"])
    model = Seq2Seq(len(vocab), blob["emb_dim"], blob["hidden"]).to(device)
    model.load_state_dict(blob["state"])
    model.eval()
    return model, vocab


class GeneratorModel:
    """Checkpoint-backed handle used by the /v1/generate route."""

    def __init__(self, path, device: str = "cpu"):
        self.model, self.vocab = load_checkpoint(path, device)

    def generate(self, prompt: str, max_tokens: int) -> str:
        ids = self.model.greedy_decode(self.vocab.encode(prompt), max_tokens)
        return self.vocab.decode(ids)
