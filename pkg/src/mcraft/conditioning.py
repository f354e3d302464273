"""Templated text pipeline: vocabulary, tokenizer, encoder and caption templates.

Captions follow a fixed grammar ("a {color} {shape} doing the {motion} motion",
plus regularization/appearance variants), so appearance and motion fragments
can be split exactly and every prompt is programmatically checkable.
"""

import json
import re
from dataclasses import dataclass

import torch

from .errors import ConfigurationError, TemplateError, VocabularyError

NULL_TOKEN = "<null>"

COLOR_NAMES = ["red", "green", "blue", "yellow", "magenta", "cyan", "orange", "white"]
SHAPE_NAMES = ["circle", "square", "triangle", "star", "cross", "ring"]

BASE_MOTIONS = [
    "swipe-down",
    "swipe-up",
    "swipe-left",
    "swipe-right",
    "circle",
    "shake",
    "zoom-in",
    "hold-still",
]
CUSTOM_MOTIONS = ["figure-eight", "triangle-path", "spiral-out"]

MOTION_TOKEN = "V*"
SUBJECT_TOKEN = "X*"

# Natural-language paraphrase fragments, one per motion class.
PARAPHRASES = {
    "swipe-down": "swiping down",
    "swipe-up": "swiping up",
    "swipe-left": "swiping left",
    "swipe-right": "swiping right",
    "circle": "moving in circles",
    "shake": "shaking side to side",
    "zoom-in": "growing larger",
    "hold-still": "holding still",
    "figure-eight": "moving in a figure eight",
    "triangle-path": "moving along a triangle path",
    "spiral-out": "spiraling outward",
}

_GLUE = [
    "a", "the", "doing", "motion", "motions", "other", "close-up", "of", "sprite",
    "swiping", "down", "up", "left", "right", "moving", "in", "circles", "shaking",
    "side", "to", "growing", "larger", "holding", "still", "figure", "eight",
    "along", "path", "spiraling", "outward", "around", "camera", "checkered",
]


class Vocabulary:
    """Ordered word list with stable ids; id 0 is the reserved null token."""

    def __init__(self, tokens=None):
        self.tokens = list(tokens) if tokens is not None else [NULL_TOKEN]
        if self.tokens[0] != NULL_TOKEN:
            raise ConfigurationError(f"vocabulary must start with {NULL_TOKEN!r}")
        self._index = {w: i for i, w in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ConfigurationError("vocabulary contains duplicate words")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, word):
        return word in self._index

    @property
    def null_id(self) -> int:
        return 0

    def id(self, word: str) -> int:
        if word in self._index:
            return self._index[word]
        if word.lower() in self._index:
            return self._index[word.lower()]
        raise VocabularyError(f"word {word!r} is not in the vocabulary", word=word)

    def word(self, token_id: int) -> str:
        return self.tokens[token_id]

    def add(self, word: str) -> int:
        if word in self._index:
            raise ConfigurationError(f"word {word!r} already in vocabulary")
        self.tokens.append(word)
        self._index[word] = len(self.tokens) - 1
        return self._index[word]

    def to_list(self):
        return list(self.tokens)


def build_default_vocabulary() -> Vocabulary:
    words = [NULL_TOKEN]
    seen = {NULL_TOKEN}
    for w in _GLUE + COLOR_NAMES + SHAPE_NAMES + BASE_MOTIONS + CUSTOM_MOTIONS:
        if w not in seen:
            words.append(w)
            seen.add(w)
    return Vocabulary(words)


def tokenize(text: str, vocab: Vocabulary, max_len: int = 16) -> list:
    """Whitespace tokenization, padded/truncated to max_len with the null id."""
    words = text.split()
    ids = [vocab.id(w) for w in words[:max_len]]
    ids.extend([vocab.null_id] * (max_len - len(ids)))
    return ids


def encode_text(ids, model, mix: bool = True) -> torch.Tensor:
    """Token ids -> (L, text_dim) conditioning matrix via the model's encoder."""
    t = torch.as_tensor(ids, dtype=torch.long, device=model.text_embed.weight.device)
    return model.encode_tokens(t[None], mix=mix)[0]


def null_condition(model, vocab: Vocabulary, max_len: int = 16) -> torch.Tensor:
    """The unconditional embedding used by classifier-free guidance."""
    return encode_text([vocab.null_id] * max_len, model)


def add_pseudo_token(vocab: Vocabulary, model, name: str, init_from="random", seed: int = 0) -> int:
    """Append a new token and a matching embedding row to the model.

    init_from is an existing token id (row copied exactly) or "random"
    (Gaussian with the embedding table's std). Trainability is controlled
    exclusively by TuningMask.trainable_token_ids.
    """
    if name in vocab:
        raise ConfigurationError(f"pseudo-token {name!r} already exists")
    new_id = vocab.add(name)
    old = model.text_embed.weight.data
    if init_from == "random":
        gen = torch.Generator().manual_seed(seed)
        row = torch.randn(old.shape[1], generator=gen, dtype=old.dtype) * float(old.std())
    else:
        if not (0 <= int(init_from) < old.shape[0]):
            raise ConfigurationError(f"init_from id {init_from} outside embedding table")
        row = old[int(init_from)].clone()
    emb = torch.nn.Embedding(old.shape[0] + 1, old.shape[1])
    emb.weight.data = torch.cat([old, row[None].to(old.dtype)], dim=0)
    emb.weight.requires_grad_(model.text_embed.weight.requires_grad)
    model.text_embed = emb
    model.cfg.vocab_size = old.shape[0] + 1
    return new_id


@dataclass
class CaptionTemplate:
    appearance_part: str
    motion_part: str
    paraphrase: str


class TemplateRegistry:
    """Caption template patterns plus pseudo-token -> motion bindings."""

    _MOTION_RE = re.compile(r"^(?P<app>.+?) doing the (?P<motion>\S+) motion$")

    def __init__(self, paraphrases=None):
        self.paraphrases = dict(paraphrases or PARAPHRASES)
        self.bindings = {}

    def bind(self, pseudo: str, motion_name: str) -> None:
        if motion_name not in self.paraphrases:
            raise ConfigurationError(f"unknown motion {motion_name!r} for {pseudo!r}")
        self.bindings[pseudo] = motion_name

    def motion_caption(self, appearance: str, motion_word: str) -> str:
        return f"{appearance} doing the {motion_word} motion"

    def split(self, prompt: str) -> CaptionTemplate:
        m = self._MOTION_RE.match(prompt.strip())
        if not m:
            raise TemplateError(
                f"prompt {prompt!r} does not match the "
                f"'{{appearance}} doing the {{motion}} motion' template"
            )
        appearance = m.group("app")
        word = m.group("motion")
        motion_name = self.bindings.get(word, word)
        if motion_name not in self.paraphrases:
            raise TemplateError(f"no paraphrase registered for motion word {word!r}")
        return CaptionTemplate(
            appearance_part=appearance,
            motion_part=f"doing the {word} motion",
            paraphrase=f"{appearance} {self.paraphrases[motion_name]}",
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(
                {"paraphrases": self.paraphrases, "bindings": self.bindings},
                f, indent=2, sort_keys=True,
            )

    @staticmethod
    def load(path) -> "TemplateRegistry":
        with open(path) as f:
            d = json.load(f)
        reg = TemplateRegistry(d["paraphrases"])
        reg.bindings = dict(d.get("bindings", {}))
        return reg


DEFAULT_REGISTRY = TemplateRegistry()


def split_caption(prompt: str, registry: TemplateRegistry = None) -> CaptionTemplate:
    return (registry or DEFAULT_REGISTRY).split(prompt)
