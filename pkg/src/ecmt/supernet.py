"""Slimmable multi-task supernet.

One shared encoder feeds N task decoders. Every conv/dense layer can run at
a reduced width drawn from a discrete ratio grid; slicing always takes the
leading block of the full-width parameters, as numpy views, so training a
slice updates the parent parameters in place. Includes the analytic
multiply-accumulate cost model and normalization-statistics recalibration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .container import read_container, write_container
from .errors import ConfigError, DimensionError, FormatError

NORM_EPS = 1e-5

LAYER_KINDS = ("conv2d", "dense", "chan-norm", "task-head")


@dataclass(frozen=True)
class WidthList:
    """Allowed width ratios: strictly increasing, 0.1 apart, ending at 1.0."""

    ratios: tuple

    def __post_init__(self):
        ratios = tuple(round(float(r), 10) for r in self.ratios)
        object.__setattr__(self, "ratios", ratios)
        if not ratios:
            raise ValueError("width list is empty")
        for r in ratios:
            if not (0.0 < r <= 1.0):
                raise ValueError(f"width ratio {r} outside (0, 1]")
        for a, b in zip(ratios, ratios[1:]):
            if abs((b - a) - 0.1) > 1e-9:
                raise ValueError(f"width ratios must be spaced 0.1 apart, got {a} -> {b}")
        if abs(ratios[-1] - 1.0) > 1e-12:
            raise ValueError(f"width list must end at 1.0, got {ratios[-1]}")

    @property
    def w_min(self) -> float:
        return self.ratios[0]

    @property
    def w_max(self) -> float:
        return self.ratios[-1]

    @property
    def spacing(self) -> float:
        return 0.1

    def __len__(self):
        return len(self.ratios)

    def __iter__(self):
        return iter(self.ratios)

    def contains(self, ratio: float) -> bool:
        return any(abs(ratio - r) < 1e-9 for r in self.ratios)

    def index_of(self, ratio: float) -> int:
        for i, r in enumerate(self.ratios):
            if abs(ratio - r) < 1e-9:
                return i
        raise ConfigError(f"ratio {ratio} is not on the width grid {list(self.ratios)}")

    def snap(self, raw: float) -> float:
        """Nearest grid member; exact ties go to the larger ratio."""
        dists = [abs(raw - r) for r in self.ratios]
        best = min(dists)
        return max(r for r, d in zip(self.ratios, dists) if d <= best + 1e-9)


@dataclass(frozen=True)
class TaskSpec:
    """One prediction task: K-way classification or d-dim regression."""

    name: str
    kind: str  # "classification" | "regression"
    dim: int

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("task dim must be >= 1")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    full_in: int
    full_out: int
    slim_in: bool = True
    slim_out: bool = True
    relu_after: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "chan-norm" and self.full_in != self.full_out:
            raise ValueError("chan-norm must preserve the channel count")
        if self.kind == "task-head" and self.slim_out:
            raise ValueError("task-head output width is task-defined, never slimmed")

    @property
    def has_own_ratio(self) -> bool:
        """Whether this layer consumes one entry of a width configuration."""
        return self.kind in ("conv2d", "dense") and self.slim_out


@dataclass(frozen=True)
class WidthConfig:
    """Per-layer width ratios: one per slimmable encoder layer, then per task."""

    encoder: tuple
    decoders: tuple

    def __post_init__(self):
        object.__setattr__(self, "encoder", tuple(float(r) for r in self.encoder))
        object.__setattr__(
            self, "decoders", tuple(tuple(float(r) for r in d) for d in self.decoders)
        )

    def flatten(self) -> tuple:
        out = list(self.encoder)
        for dec in self.decoders:
            out.extend(dec)
        return tuple(out)

    @property
    def length(self) -> int:
        return len(self.flatten())


@dataclass
class NormStats:
    """Per-layer running statistics, valid only for the config they came from."""

    means: dict
    variances: dict
    config: WidthConfig


def active_count(ratio: float, full: int) -> int:
    """Active channels at a width ratio: ceil(ratio * full), at least 1.

    The product is nudged down by 1e-9 before the ceiling so that float
    artifacts such as 0.7 * 10 == 7.000000000000001 do not round up.
    """
    if not (0.0 < ratio <= 1.0):
        raise ValueError(f"ratio {ratio} outside (0, 1]")
    if full < 1:
        raise ValueError("channel count must be >= 1")
    return max(1, min(full, math.ceil(ratio * full - 1e-9)))


class SuperNet:
    """Full-width parent network holding all parameters.

    ``encoder`` and each decoder are ordered :class:`LayerSpec` lists.
    Parameters live in ``self.params`` keyed by layer name; the manifest
    order (encoder first, then decoders task by task) is the serialization
    order and the width-vector order.
    """

    def __init__(self, encoder, decoders, tasks, widths: WidthList,
                 input_shape=(1, 8, 8), seed: int = 0):
        if len(decoders) != len(tasks):
            raise ValueError("one decoder per task required")
        self.encoder = list(encoder)
        self.decoders = [list(d) for d in decoders]
        self.tasks = list(tasks)
        self.widths = widths
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self._check_chains()
        self.layer_specs: dict[str, LayerSpec] = dict(self._layer_names())
        self.params: dict[str, ad.Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # -- construction -----------------------------------------------------

    def _check_chains(self):
        chains = [("enc", self.encoder)] + [
            (f"dec{t}", dec) for t, dec in enumerate(self.decoders)
        ]
        enc_out = self.encoder[-1].full_out
        for tag, layers in chains:
            prev_out = self.input_shape[0] if tag == "enc" else enc_out
            for i, spec in enumerate(layers):
                if spec.full_in != prev_out:
                    raise ValueError(
                        f"{tag}[{i}] expects {spec.full_in} inputs, upstream has {prev_out}"
                    )
                prev_out = spec.full_out
        for t, (dec, task) in enumerate(zip(self.decoders, self.tasks)):
            if dec[-1].kind != "task-head" or dec[-1].full_out != task.dim:
                raise ValueError(f"decoder {t} must end in a task-head of width {task.dim}")

    def _layer_names(self):
        for i, spec in enumerate(self.encoder):
            yield f"enc{i}", spec
        for t, dec in enumerate(self.decoders):
            for i, spec in enumerate(dec):
                yield f"dec{t}.{i}", spec

    def _init_params(self, rng):
        for name, spec in self._layer_names():
            if spec.kind == "conv2d":
                fan_in = 9 * spec.full_in
                w = rng.normal(0.0, math.sqrt(2.0 / fan_in), (spec.full_out, spec.full_in, 3, 3))
                self.params[f"{name}.w"] = ad.Tensor(w, name=f"{name}.w")
                self.params[f"{name}.b"] = ad.Tensor(np.zeros(spec.full_out), name=f"{name}.b")
            elif spec.kind in ("dense", "task-head"):
                w = rng.normal(0.0, math.sqrt(2.0 / spec.full_in), (spec.full_in, spec.full_out))
                self.params[f"{name}.w"] = ad.Tensor(w, name=f"{name}.w")
                self.params[f"{name}.b"] = ad.Tensor(np.zeros(spec.full_out), name=f"{name}.b")
            else:  # chan-norm
                self.params[f"{name}.gamma"] = ad.Tensor(np.ones(spec.full_in), name=f"{name}.gamma")
                self.params[f"{name}.beta"] = ad.Tensor(np.zeros(spec.full_in), name=f"{name}.beta")

    # -- width configuration ----------------------------------------------

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def encoder_slim_count(self) -> int:
        return sum(1 for s in self.encoder if s.has_own_ratio)

    def decoder_slim_counts(self) -> list:
        return [sum(1 for s in d if s.has_own_ratio) for d in self.decoders]

    @property
    def config_length(self) -> int:
        return self.encoder_slim_count() + sum(self.decoder_slim_counts())

    def validate_config(self, cfg: WidthConfig) -> None:
        if len(cfg.encoder) != self.encoder_slim_count():
            raise ConfigError(
                f"config has {len(cfg.encoder)} encoder ratios, net needs "
                f"{self.encoder_slim_count()}"
            )
        counts = self.decoder_slim_counts()
        if len(cfg.decoders) != len(counts):
            raise ConfigError(
                f"config has {len(cfg.decoders)} decoders, net has {len(counts)}"
            )
        for t, (dec, need) in enumerate(zip(cfg.decoders, counts)):
            if len(dec) != need:
                raise ConfigError(f"decoder {t} config has {len(dec)} ratios, needs {need}")
        for r in cfg.flatten():
            if not self.widths.contains(r):
                raise ConfigError(f"ratio {r} is not on the width grid {list(self.widths)}")

    def uniform_config(self, ratio: float) -> WidthConfig:
        return WidthConfig(
            encoder=(ratio,) * self.encoder_slim_count(),
            decoders=tuple((ratio,) * c for c in self.decoder_slim_counts()),
        )

    # -- forward ------------------------------------------------------------

    def forward(self, cfg: WidthConfig, batch, stats: NormStats | None = None):
        """Run encoder and all decoders at ``cfg``.

        Returns (per-task output tensors, encoder feature z). With
        ``stats=None`` chan-norm layers normalize with the statistics of the
        current batch; otherwise the supplied recalibrated statistics are
        used and must match ``cfg``.
        """
        self.validate_config(cfg)
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != len(self.input_shape) + 1 or batch.shape[1:] != self.input_shape:
            raise DimensionError(
                f"batch shape {batch.shape} does not match input spec {self.input_shape}"
            )
        if stats is not None and stats.config != cfg:
            raise ConfigError("normalization statistics were calibrated for a different config")
        x = ad.Tensor(batch)
        z, enc_ratio = self._run_chain("enc", self.encoder, cfg.encoder, x, 1.0, stats, None)
        outputs = []
        for t, dec in enumerate(self.decoders):
            out, _ = self._run_chain(f"dec{t}", dec, cfg.decoders[t], z, enc_ratio, stats, None)
            outputs.append(out)
        return outputs, z

    def _run_chain(self, tag, layers, ratios, x, cur_ratio, stats, collect):
        ratio_iter = iter(ratios)
        idx = 0
        for spec in layers:
            name = f"{tag}{idx}" if tag == "enc" else f"{tag}.{idx}"
            idx += 1
            if spec.kind in ("conv2d", "dense", "task-head"):
                out_ratio = next(ratio_iter) if spec.has_own_ratio else 1.0
                in_ratio = cur_ratio if spec.slim_in else 1.0
                sliced = slice_layer_params(self, name, in_ratio, out_ratio)
                if spec.kind == "conv2d":
                    x = ad.conv2d(x, sliced["w"])
                    a_out = sliced["b"].value.shape[0]
                    x = ad.add(x, ad.reshape(sliced["b"], (1, a_out, 1, 1)))
                else:
                    if x.value.ndim == 4:
                        x = ad.global_avg_pool(x)
                    x = ad.add(ad.matmul(x, sliced["w"]), sliced["b"])
                cur_ratio = out_ratio
            else:  # chan-norm
                sliced = slice_layer_params(self, name, cur_ratio, cur_ratio)
                x = self._apply_norm(name, x, sliced, stats, collect)
            if spec.relu_after:
                x = ad.relu(x)
        return x, cur_ratio

    def _apply_norm(self, name, x, sliced, stats, collect):
        axes = (0, 2, 3) if x.value.ndim == 4 else (0,)
        bshape = (1, -1, 1, 1) if x.value.ndim == 4 else (1, -1)
        gamma = ad.reshape(sliced["gamma"], bshape)
        beta = ad.reshape(sliced["beta"], bshape)
        if stats is None:
            mu = ad.reduce_mean(x, axis=axes, keepdims=True)
            centred = ad.sub(x, mu)
            var = ad.reduce_mean(ad.mul(centred, centred), axis=axes, keepdims=True)
            if collect is not None:
                collect[name] = (
                    mu.value.reshape(-1).copy(),
                    var.value.reshape(-1).copy(),
                )
            inv_std = ad.power(ad.add(var, NORM_EPS), -0.5)
            xhat = ad.mul(centred, inv_std)
        else:
            if name not in stats.means:
                raise ConfigError(f"no recalibrated statistics for layer {name!r}")
            mu = stats.means[name].reshape(bshape)
            inv = 1.0 / np.sqrt(stats.variances[name].reshape(bshape) + NORM_EPS)
            xhat = ad.mul(ad.sub(x, ad.Tensor(mu)), ad.Tensor(inv))
        return ad.add(ad.mul(xhat, gamma), beta)

    # -- cost model ---------------------------------------------------------

    def count_macs(self, cfg: WidthConfig, input_shape=None) -> int:
        """Exact multiply-accumulate count of one forward pass per sample.

        conv2d costs 9 * a_in * a_out * H * W, dense layers a_in * a_out;
        normalization, activations, and pooling cost 0.
        """
        self.validate_config(cfg)
        shape = tuple(input_shape) if input_shape is not None else self.input_shape
        h, w = (shape[1], shape[2]) if len(shape) == 3 else (1, 1)
        total = 0

        def chain_macs(layers, ratios, cur_ratio):
            nonlocal total
            ratio_iter = iter(ratios)
            spatial = True
            for spec in layers:
                if spec.kind == "chan-norm":
                    continue
                out_ratio = next(ratio_iter) if spec.has_own_ratio else 1.0
                in_ratio = cur_ratio if spec.slim_in else 1.0
                a_in = active_count(in_ratio, spec.full_in)
                a_out = active_count(out_ratio, spec.full_out)
                if spec.kind == "conv2d":
                    total += 9 * a_in * a_out * h * w
                else:
                    total += a_in * a_out
                    spatial = False
                cur_ratio = out_ratio
            return cur_ratio

        enc_ratio = chain_macs(self.encoder, cfg.encoder, 1.0)
        for t, dec in enumerate(self.decoders):
            chain_macs(dec, cfg.decoders[t], enc_ratio)
        return total

    # -- normalization recalibration -----------------------------------------

    def bn_recalibrate(self, cfg: WidthConfig, batches) -> NormStats:
        """Recompute normalization statistics for ``cfg`` on calibration data.

        Runs per-batch-normalized forwards and averages the observed batch
        means/variances across batches. Parameters are untouched.
        """
        batches = list(batches)
        if not batches:
            raise ValueError("bn_recalibrate needs at least one calibration batch")
        self.validate_config(cfg)
        sums_mu: dict[str, np.ndarray] = {}
        sums_var: dict[str, np.ndarray] = {}
        for batch in batches:
            batch = np.asarray(batch, dtype=np.float64)
            collect: dict = {}
            x = ad.Tensor(batch)
            z, enc_ratio = self._run_chain("enc", self.encoder, cfg.encoder, x, 1.0, None, collect)
            for t, dec in enumerate(self.decoders):
                self._run_chain(f"dec{t}", dec, cfg.decoders[t], z, enc_ratio, None, collect)
            for name, (mu, var) in collect.items():
                if name not in sums_mu:
                    sums_mu[name] = np.zeros_like(mu)
                    sums_var[name] = np.zeros_like(var)
                sums_mu[name] += mu
                sums_var[name] += var
        n = len(batches)
        return NormStats(
            means={k: v / n for k, v in sums_mu.items()},
            variances={k: v / n for k, v in sums_var.items()},
            config=cfg,
        )

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        manifest = [[name, list(t.value.shape)] for name, t in self.params.items()]
        header = {
            "format": "supernet",
            "version": 1,
            "width_list": list(self.widths.ratios),
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "tasks": [{"name": t.name, "kind": t.kind, "dim": t.dim} for t in self.tasks],
            "encoder": [_spec_to_dict(s) for s in self.encoder],
            "decoders": [[_spec_to_dict(s) for s in d] for d in self.decoders],
            "manifest": manifest,
        }
        write_container(path, header, [t.value for t in self.params.values()])

    @classmethod
    def load(cls, path) -> "SuperNet":
        header, arrays = read_container(path)
        if header.get("format") != "supernet":
            raise FormatError(f"{path}: not a supernet checkpoint")
        net = cls(
            encoder=[_spec_from_dict(d) for d in header["encoder"]],
            decoders=[[_spec_from_dict(d) for d in dec] for dec in header["decoders"]],
            tasks=[TaskSpec(**t) for t in header["tasks"]],
            widths=WidthList(tuple(header["width_list"])),
            input_shape=tuple(header["input_shape"]),
            seed=header.get("seed", 0),
        )
        names = [name for name, _ in header["manifest"]]
        if set(names) != set(net.params):
            raise FormatError(f"{path}: manifest does not match the layer layout")
        for name, arr in zip(names, arrays):
            if net.params[name].value.shape != arr.shape:
                raise FormatError(f"{path}: shape mismatch for {name!r}")
            net.params[name].value = arr
        return net


def _spec_to_dict(s: LayerSpec) -> dict:
    return {
        "kind": s.kind,
        "full_in": s.full_in,
        "full_out": s.full_out,
        "slim_in": s.slim_in,
        "slim_out": s.slim_out,
        "relu_after": s.relu_after,
    }


def _spec_from_dict(d: dict) -> LayerSpec:
    return LayerSpec(**d)


def slice_layer_params(net: SuperNet, layer_name: str, in_ratio: float, out_ratio: float) -> dict:
    """Active-parameter views of one layer at the given width ratios.

    Views select the leading channels; gradients flow back into the
    supernet's full-width parameters.
    """
    spec = net.layer_specs[layer_name]
    for side, ratio, slim in (("in", in_ratio, spec.slim_in), ("out", out_ratio, spec.slim_out)):
        if slim or spec.kind == "chan-norm":
            if not net.widths.contains(ratio):
                raise ConfigError(f"{layer_name} {side}-ratio {ratio} not in the width list")
        elif abs(ratio - 1.0) > 1e-9:
            raise ConfigError(f"{layer_name} {side} side is not slimmable; ratio must be 1.0")
    if spec.kind == "conv2d":
        a_in = active_count(in_ratio if spec.slim_in else 1.0, spec.full_in)
        a_out = active_count(out_ratio if spec.slim_out else 1.0, spec.full_out)
        return {
            "w": ad.leading_slice(net.params[f"{layer_name}.w"], (a_out, a_in, None, None)),
            "b": ad.leading_slice(net.params[f"{layer_name}.b"], (a_out,)),
        }
    if spec.kind in ("dense", "task-head"):
        a_in = active_count(in_ratio if spec.slim_in else 1.0, spec.full_in)
        a_out = active_count(out_ratio if spec.slim_out else 1.0, spec.full_out)
        return {
            "w": ad.leading_slice(net.params[f"{layer_name}.w"], (a_in, a_out)),
            "b": ad.leading_slice(net.params[f"{layer_name}.b"], (a_out,)),
        }
    a = active_count(in_ratio, spec.full_in)
    return {
        "gamma": ad.leading_slice(net.params[f"{layer_name}.gamma"], (a,)),
        "beta": ad.leading_slice(net.params[f"{layer_name}.beta"], (a,)),
    }


def sample_config(rng: np.random.Generator, widths: WidthList, net: SuperNet) -> WidthConfig:
    """Independent uniform draw from the width grid for every slimmable layer."""
    ratios = list(widths.ratios)

    def draw(n):
        return tuple(ratios[i] for i in rng.integers(0, len(ratios), size=n))

    return WidthConfig(
        encoder=draw(net.encoder_slim_count()),
        decoders=tuple(draw(c) for c in net.decoder_slim_counts()),
    )


def extremes(widths: WidthList, net: SuperNet) -> tuple:
    """(all-max config, all-min config)."""
    return net.uniform_config(widths.w_max), net.uniform_config(widths.w_min)


DEFAULT_TASKS = (
    TaskSpec("shape", "classification", 4),
    TaskSpec("area", "regression", 1),
    TaskSpec("cx", "regression", 1),
)


def build_toy_supernet(widths: WidthList | None = None, tasks=None, seed: int = 0,
                       encoder_channels=(8, 16), decoder_channels: int = 12,
                       input_shape=(1, 8, 8)) -> SuperNet:
    """Desk-scale supernet: 2-conv encoder, 1-conv decoder per task."""
    widths = widths or WidthList((0.6, 0.7, 0.8, 0.9, 1.0))
    tasks = tuple(tasks) if tasks is not None else DEFAULT_TASKS
    c1, c2 = encoder_channels
    encoder = [
        LayerSpec("conv2d", input_shape[0], c1, slim_in=False, slim_out=True),
        LayerSpec("chan-norm", c1, c1, relu_after=True),
        LayerSpec("conv2d", c1, c2, slim_in=True, slim_out=True),
        LayerSpec("chan-norm", c2, c2, relu_after=True),
    ]
    decoders = []
    for task in tasks:
        decoders.append([
            LayerSpec("conv2d", c2, decoder_channels, slim_in=True, slim_out=True),
            LayerSpec("chan-norm", decoder_channels, decoder_channels, relu_after=True),
            LayerSpec("task-head", decoder_channels, task.dim, slim_in=True, slim_out=False),
        ])
    return SuperNet(encoder, decoders, tasks, widths, input_shape=input_shape, seed=seed)
