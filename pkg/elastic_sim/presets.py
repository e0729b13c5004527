"""Built-in size profiles derived from published architecture dimensions.

Non-transformer parameters are folded into the adjacent transformer layer: embeddings
into the attention block of layer 0 and the task head into the MLP block of layer L-1.
"""
import logging
from functools import lru_cache
from typing import Callable, Dict

from .errors import ConfigError
from .schemas import ModelSpec

log = logging.getLogger(__name__)

FP32_BYTES = 4


def _linear(fan_in: int, fan_out: int) -> int:
    return fan_in * fan_out + fan_out


def _layer_norm(hidden: int) -> int:
    return 2 * hidden


def _attention_block(hidden: int) -> int:
    # pre/post LayerNorm + fused QKV projection + output projection
    return _layer_norm(hidden) + _linear(hidden, 3 * hidden) + _linear(hidden, hidden)


def _mlp_block(hidden: int, intermediate: int) -> int:
    return _layer_norm(hidden) + _linear(hidden, intermediate) + _linear(intermediate, hidden)


def _build(name: str, layers: int, attention: int, mlp: int, embedding: int, head: int,
           activation_bytes: int) -> ModelSpec:
    attention_params = [attention] * layers
    mlp_params = [mlp] * layers
    attention_params[0] += embedding
    mlp_params[-1] += head
    return ModelSpec(
        name=name,
        layer_count=layers,
        attention_params=attention_params,
        mlp_params=mlp_params,
        activation_bytes_per_sample=[activation_bytes] * (layers + 1),
        bytes_per_param=FP32_BYTES,
    )


def vit_b16() -> ModelSpec:
    """ViT-B/16 at 224x224: 196 patches + [CLS], hidden 768, MLP 3072, 1000 classes."""
    hidden, intermediate, patch, channels, classes = 768, 3072, 16, 3, 1000
    tokens = (224 // patch) ** 2 + 1

    patch_embedding = patch * patch * channels * hidden + hidden
    embedding = patch_embedding + hidden + tokens * hidden  # + class token + positions
    head = _layer_norm(hidden) + _linear(hidden, classes)

    return _build(
        "ViT-B/16", 12,
        _attention_block(hidden), _mlp_block(hidden, intermediate),
        embedding, head,
        activation_bytes=tokens * hidden * FP32_BYTES,
    )


def bert_large(sequence_length: int = 384) -> ModelSpec:
    """BERT-large (uncased) with a span-prediction head, hidden 1024, MLP 4096."""
    hidden, intermediate, vocab, positions, token_types = 1024, 4096, 30522, 512, 2

    embedding = (vocab + positions + token_types) * hidden + _layer_norm(hidden)
    head = _linear(hidden, 2)

    return _build(
        "BERT-large", 24,
        _attention_block(hidden), _mlp_block(hidden, intermediate),
        embedding, head,
        activation_bytes=sequence_length * hidden * FP32_BYTES,
    )


def uniform_12() -> ModelSpec:
    """Synthetic 12-layer stack with 4M-parameter attention and 8M-parameter MLP blocks."""
    return ModelSpec(
        name="uniform-12",
        layer_count=12,
        attention_params=[4_000_000] * 12,
        mlp_params=[8_000_000] * 12,
        activation_bytes_per_sample=[1_000_000] * 13,
        bytes_per_param=FP32_BYTES,
    )


PRESETS: Dict[str, Callable[[], ModelSpec]] = {
    "ViT-B/16": vit_b16,
    "BERT-large": bert_large,
    "uniform-12": uniform_12,
}


@lru_cache(maxsize=None)
def get_preset(name: str) -> ModelSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown model preset '{name}', expected one of {sorted(PRESETS)}")
    model = PRESETS[name]()
    log.debug(f"Built preset {name}: L={model.layer_count}, S={model.total_params:,} params")
    return model
