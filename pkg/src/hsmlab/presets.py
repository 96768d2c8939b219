"""Shipped experiment presets, one per mixer comparison row.

Each preset is a JSON model config under ``hsmlab/presets/``. The reference
attention model uses FFN width 512; every shift-mixing and hybrid preset has
its FFN width pre-balanced so its total parameter count matches the reference
budget of 5.1 M as closely as FFN quantization allows (see
``model.balance_ffn_dim``).
"""

from __future__ import annotations

from importlib import resources

from .mixers import MixerSpec, default_shifts, rotate_shift_schedule
from .model import ModelConfig

__all__ = ["PRESET_NAMES", "PARAM_BUDGET", "load_preset", "preset_config", "preset_json"]

PARAM_BUDGET = 5_100_000

_LAYERS = 7
_HEADS = 8
_MULTIHEAD_SHIFTS = (1, 2, 4, 8, 16, 32, 64, 128)

PRESET_NAMES = (
    "gpt_reference",
    "hsm_ab",
    "hsm_ab_vector",
    "hsm_AB",
    "hsm_gated_single",
    "hsm_gated_double",
    "hsm_fusion",
    "hsm_ab_multihead",
    "hsm_ab_multihead_ext",
    "hybrid_06",
    "hybrid_multihead_06",
)


def _dense() -> MixerSpec:
    return MixerSpec("dense_attention", heads=_HEADS)


def _hsm_stack(kind: str) -> tuple[MixerSpec, ...]:
    return tuple(MixerSpec(kind, shifts=(s,)) for s in default_shifts(_LAYERS))


def _multihead_ab(layer: int, rotate: bool) -> MixerSpec:
    shifts = rotate_shift_schedule(_MULTIHEAD_SHIFTS, layer) if rotate else _MULTIHEAD_SHIFTS
    return MixerSpec("scalar_ab", heads=_HEADS, shifts=shifts)


def _hybrid(hsm_at: tuple[int, ...], multihead: bool) -> tuple[MixerSpec, ...]:
    # a shift layer at stack position l keeps the hierarchy's shift 2**l
    layers = []
    for l in range(_LAYERS):
        if l in hsm_at:
            if multihead:
                layers.append(MixerSpec("scalar_ab", heads=_HEADS, shifts=_MULTIHEAD_SHIFTS))
            else:
                layers.append(MixerSpec("scalar_ab", shifts=(2**l,)))
        else:
            layers.append(_dense())
    return tuple(layers)


def _build(name: str) -> ModelConfig:
    base = dict(dim=256, context=128, vocab=5000, dropout=0.1)
    if name == "gpt_reference":
        return ModelConfig(ffn_hidden=512, layers=tuple(_dense() for _ in range(_LAYERS)), **base)
    if name == "hsm_ab":
        return ModelConfig(ffn_hidden=1052, layers=_hsm_stack("scalar_ab"), **base)
    if name == "hsm_ab_vector":
        return ModelConfig(ffn_hidden=1051, layers=_hsm_stack("vector_ab"), **base)
    if name == "hsm_AB":
        return ModelConfig(ffn_hidden=796, layers=_hsm_stack("matrix_ab"), **base)
    if name == "hsm_gated_single":
        return ModelConfig(ffn_hidden=796, layers=_hsm_stack("gated_single"), **base)
    if name == "hsm_gated_double":
        return ModelConfig(ffn_hidden=796, layers=_hsm_stack("gated_double"), **base)
    if name == "hsm_fusion":
        return ModelConfig(ffn_hidden=668, layers=_hsm_stack("fusion"), **base)
    if name == "hsm_ab_multihead":
        return ModelConfig(
            ffn_hidden=1052,
            layers=tuple(_multihead_ab(l, rotate=False) for l in range(_LAYERS)),
            **base,
        )
    if name == "hsm_ab_multihead_ext":
        return ModelConfig(
            ffn_hidden=1052,
            layers=tuple(_multihead_ab(l, rotate=True) for l in range(_LAYERS)),
            **base,
        )
    if name == "hybrid_06":
        return ModelConfig(ffn_hidden=686, layers=_hybrid((0, 6), multihead=False), **base)
    if name == "hybrid_multihead_06":
        return ModelConfig(ffn_hidden=686, layers=_hybrid((0, 6), multihead=True), **base)
    raise KeyError(name)


def preset_config(name: str) -> ModelConfig:
    """Build the preset in code (source of truth for the shipped JSON files)."""
    if name not in PRESET_NAMES:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    return _build(name)


def preset_json(name: str) -> str:
    return preset_config(name).to_json()


def load_preset(name: str) -> ModelConfig:
    """Load a preset from the shipped JSON config file."""
    if name not in PRESET_NAMES:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    path = resources.files("hsmlab").joinpath(f"presets/{name}.json")
    return ModelConfig.from_json(path.read_text(encoding="utf-8"))


def write_preset_files(directory) -> None:
    """Regenerate the shipped JSON files from the in-code definitions."""
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in PRESET_NAMES:
        (d / f"{name}.json").write_text(preset_json(name), encoding="utf-8")


if __name__ == "__main__":  # regenerate shipped files: python -m hsmlab.presets
    import pathlib

    here = pathlib.Path(__file__).parent / "presets"
    write_preset_files(here)
    print(f"wrote {len(PRESET_NAMES)} preset files to {here}")
