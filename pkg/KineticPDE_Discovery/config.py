"""Experiment configuration files.

An experiment config is a flat ``key = value`` text file; ``#`` starts a
comment. Values are validated by ``ExperimentConfigForm`` and command-line
flags override file values. Space-dependent inputs use typed prefixes:

    const:c          c
    poly:a0,a1,...   a0 + a1·x + ...
    sin:a,b,k        a + b·sin(2πkx)
"""

import math
from pathlib import Path

import torch
from django import forms
from django.conf import settings

from .exceptions import ConfigurationError
from .fitloss import FitScheme, LossConfig
from .grid import DTYPE, make_grid
from .operators import OperatorTag
from .solver import make_physics
from .symnet import AnsatzConfig, EpsMode, PhysicsMode
from .train import TrainConfig


def parse_spatial(text):
    """Parses a spatial function string into a callable of cell centers.

    Raises:
        ConfigurationError: On an unknown prefix or malformed numbers.
    """

    kind, sep, body = str(text).strip().partition(":")
    if not sep:
        raise ConfigurationError(f"Spatial function {text!r} needs a const:, poly: or sin: prefix")
    try:
        numbers = [float(v) for v in body.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"Malformed numbers in {text!r}") from exc

    if kind == "const" and len(numbers) == 1:
        return lambda x: torch.full_like(x, numbers[0])
    if kind == "poly" and numbers:
        def poly(x):
            out = torch.zeros_like(x)
            for a in reversed(numbers):
                out = out * x + a
            return out

        return poly
    if kind == "sin" and len(numbers) == 3:
        a, b, k = numbers
        return lambda x: a + b * torch.sin(2.0 * math.pi * k * x)
    raise ConfigurationError(f"Cannot parse spatial function {text!r}")


def spatial_field(text, grid):
    return parse_spatial(text)(grid.centers().to(DTYPE))


def _int_list(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


class SpatialFunctionField(forms.CharField):
    """A CharField holding a ``const:``/``poly:``/``sin:`` function."""

    def validate(self, value):
        super().validate(value)
        if value:
            try:
                parse_spatial(value)
            except ConfigurationError as exc:
                raise forms.ValidationError(str(exc)) from exc


class ExperimentConfigForm(forms.Form):
    """Every knob of an experiment. Blank fields fall back to ``DEFAULTS``."""

    # Physics and data generation
    epsilon = forms.FloatField(required=False, min_value=0.0, max_value=1.0)
    nx = forms.IntegerField(required=False, min_value=4)
    nv = forms.IntegerField(required=False, min_value=2, max_value=64)
    nt = forms.IntegerField(required=False, min_value=2)
    dt = forms.FloatField(required=False, min_value=0.0)
    stride_x = forms.IntegerField(required=False, min_value=1)
    stride_t = forms.IntegerField(required=False, min_value=1)
    sigma_s = SpatialFunctionField(required=False)
    sigma_a = SpatialFunctionField(required=False)
    source = SpatialFunctionField(required=False)

    # Ansatz
    scheme = forms.ChoiceField(required=False, choices=[(s.value, s.value) for s in FitScheme])
    multiscale = forms.IntegerField(required=False, min_value=0)
    layers = forms.IntegerField(required=False, min_value=0)
    base_ops = forms.CharField(required=False)
    mean_free_mask = forms.NullBooleanField(required=False)
    components = forms.ChoiceField(required=False, choices=[("two_component",) * 2, ("scalar",) * 2])
    equations = forms.CharField(required=False)
    stencil_order = forms.TypedChoiceField(required=False, choices=[("1", "1"), ("2", "2")], coerce=int, empty_value=None)
    spatial_pieces = forms.IntegerField(required=False, min_value=0)
    spatial_degree = forms.IntegerField(required=False, min_value=1)
    physics_mode = forms.ChoiceField(required=False, choices=[(m.value, m.value) for m in PhysicsMode])
    eps_mode = forms.ChoiceField(required=False, choices=[(m.value, m.value) for m in EpsMode])
    eps_interval = forms.IntegerField(required=False, min_value=0)
    interval_sweep = forms.CharField(required=False)

    # Loss
    norm = forms.ChoiceField(required=False, choices=[("l1", "l1"), ("l2", "l2"), ("huber", "huber")])
    huber_delta = forms.FloatField(required=False)
    gamma_sparse = forms.FloatField(required=False, min_value=0.0)
    gamma_cont = forms.FloatField(required=False, min_value=0.0)
    gamma_meanfree = forms.FloatField(required=False, min_value=0.0)

    # Training
    lr = forms.FloatField(required=False)
    adam_beta1 = forms.FloatField(required=False)
    adam_beta2 = forms.FloatField(required=False)
    adam_eps = forms.FloatField(required=False)
    epochs = forms.IntegerField(required=False, min_value=0)
    minibatch = forms.CharField(required=False)
    per_scale_lr = forms.NullBooleanField(required=False)
    log_every = forms.IntegerField(required=False, min_value=0)
    seed = forms.IntegerField(required=False, min_value=0)

    # Extraction and baselines
    prune_threshold = forms.FloatField(required=False, min_value=0.0)
    truth = forms.CharField(required=False)
    method = forms.ChoiceField(required=False, choices=[("lasso", "lasso"), ("stridge", "stridge")])
    ridge_lambda = forms.FloatField(required=False, min_value=0.0)
    hard_threshold = forms.FloatField(required=False)
    stridge_sweeps = forms.IntegerField(required=False, min_value=1)

    output_dir = forms.CharField(required=False)

    def clean_base_ops(self):
        value = self.cleaned_data.get("base_ops")
        if value:
            try:
                return ",".join(OperatorTag.parse(t).value for t in value.split(",") if t.strip())
            except ConfigurationError as exc:
                raise forms.ValidationError(str(exc)) from exc
        return value

    def clean_minibatch(self):
        value = (self.cleaned_data.get("minibatch") or "").strip()
        if value in ("", "full"):
            return value
        if not value.isdigit() or int(value) < 1:
            raise forms.ValidationError("minibatch must be a positive integer or 'full'")
        return value

    def clean_interval_sweep(self):
        value = self.cleaned_data.get("interval_sweep")
        try:
            _int_list(value or "")
        except ValueError as exc:
            raise forms.ValidationError("interval_sweep must be a comma-separated list of integers") from exc
        return value


DEFAULTS = {
    "epsilon": None,
    "nx": 200,
    "nv": 16,
    "nt": 56,
    "dt": None,
    "stride_x": 1,
    "stride_t": 1,
    "sigma_s": "const:1",
    "sigma_a": "const:0",
    "source": "const:0",
    "scheme": FitScheme.IMEX1.value,
    "multiscale": 1,
    "layers": 1,
    "base_ops": "I,A,P",
    "mean_free_mask": True,
    "components": "two_component",
    "equations": "g,rho",
    "stencil_order": 1,
    "spatial_pieces": 0,
    "spatial_degree": 2,
    "physics_mode": PhysicsMode.KNOWN.value,
    "eps_mode": EpsMode.GLOBAL.value,
    "eps_interval": 0,
    "interval_sweep": "",
    "norm": "l1",
    "huber_delta": 1.0,
    "gamma_sparse": 1e-4,
    "gamma_cont": 1e-3,
    "gamma_meanfree": 0.0,
    "lr": 1e-3,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "epochs": 1000,
    "minibatch": "full",
    "per_scale_lr": True,
    "log_every": 500,
    "seed": None,
    "prune_threshold": 1e-3,
    "truth": "g,rho",
    "method": "lasso",
    "ridge_lambda": 1e-5,
    "hard_threshold": 1e-2,
    "stridge_sweeps": 10,
    "output_dir": None,
}


def read_config_file(path):
    """Reads ``key = value`` lines into a dict of strings.

    Raises:
        ConfigurationError: On a malformed line or an unknown key.
        OSError: If the file cannot be read.
    """

    values = {}
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}:{number}: expected 'key = value'")
        key = key.strip()
        if key not in ExperimentConfigForm.base_fields:
            raise ConfigurationError(f"{path}:{number}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _as_form_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


class ExperimentConfig:
    """Resolved experiment settings and builders for the typed configs."""

    def __init__(self, values):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self):
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in self.values.items()}

    # -- builders ------------------------------------------------------------

    def grid(self):
        return make_grid(self["nx"], self["nv"])

    def time_step(self, grid):
        """The configured dt, or ½Δx² on the generation grid."""
        return self["dt"] or 0.5 * grid.dx**2

    def physics(self, grid):
        if self["epsilon"] is None:
            raise ConfigurationError("epsilon is required to generate data")
        return make_physics(
            grid,
            self["epsilon"],
            sigma_s=spatial_field(self["sigma_s"], grid),
            sigma_a=spatial_field(self["sigma_a"], grid),
            source=spatial_field(self["source"], grid),
        )

    def ansatz(self):
        return AnsatzConfig(
            scales=self["multiscale"],
            layers=self["layers"],
            base_ops=tuple(OperatorTag.parse(t) for t in self["base_ops"].split(",") if t.strip()),
            components=self["components"],
            equations=tuple(e.strip() for e in self["equations"].split(",") if e.strip()),
            mean_free_mask=self["mean_free_mask"],
            stencil_order=self["stencil_order"],
            spatial_pieces=self["spatial_pieces"],
            spatial_degree=self["spatial_degree"],
            physics_mode=self["physics_mode"],
            eps_mode=self["eps_mode"],
            eps_interval=self["eps_interval"],
        )

    def loss(self):
        return LossConfig(
            norm=self["norm"],
            huber_delta=self["huber_delta"],
            gamma_sparse=self["gamma_sparse"],
            gamma_cont=self["gamma_cont"],
            gamma_meanfree=self["gamma_meanfree"],
        )

    def training(self):
        minibatch = self["minibatch"]
        return TrainConfig(
            lr_base=self["lr"],
            adam_beta1=self["adam_beta1"],
            adam_beta2=self["adam_beta2"],
            adam_eps=self["adam_eps"],
            epochs=self["epochs"],
            minibatch=None if minibatch == "full" else int(minibatch),
            per_scale_lr=self["per_scale_lr"],
            seed=self["seed"],
            interval_sweep=_int_list(self["interval_sweep"]),
            log_every=self["log_every"],
        )

    @property
    def scheme(self):
        return FitScheme(self["scheme"])

    @property
    def truth_components(self):
        return tuple(t.strip() for t in self["truth"].split(",") if t.strip())


def load_experiment_config(path=None, overrides=None):
    """Loads, validates and resolves an experiment config.

    Args:
        path: Optional config file.
        overrides (dict): Values that replace file values; None entries are
            ignored.

    Returns:
        ExperimentConfig: Every knob resolved, defaults filled in.

    Raises:
        ConfigurationError: On unknown keys or invalid values.
    """

    data = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if key not in ExperimentConfigForm.base_fields:
            raise ConfigurationError(f"Unknown config key {key!r}")
        if value is not None:
            data[key] = _as_form_value(value)

    form = ExperimentConfigForm(data)
    if not form.is_valid():
        problems = "; ".join(f"{field}: {' '.join(errors)}" for field, errors in form.errors.items())
        raise ConfigurationError(f"Invalid configuration: {problems}")

    values = {}
    for key, default in DEFAULTS.items():
        value = form.cleaned_data.get(key)
        values[key] = default if value is None or value == "" else value
    if values["seed"] is None:
        values["seed"] = settings.KINETIC_SEED
    values["output_dir"] = Path(values["output_dir"] or settings.KINETIC_OUTPUT_DIR)
    return ExperimentConfig(values)
