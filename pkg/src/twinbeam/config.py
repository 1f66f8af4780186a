"""Experiment configuration (INI-style ``.cfg`` files)."""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from .channel import ChannelParams
from .errors import ConfigError, ParameterError

__all__ = ["ExperimentConfig", "load_config", "default_config_path", "SHIPPED_CONFIG"]

SHIPPED_CONFIG = "paper.cfg"


@dataclass(frozen=True)
class ChannelConfig:
    eta: float
    t: float
    mean_idler: float
    modes: float
    noise_mean_0: float
    noise_mean_1: float
    noise_modes: float = 1.0

    def params(self) -> ChannelParams:
        return ChannelParams.from_detected(
            self.mean_idler, self.eta, self.t, self.modes,
            (self.noise_mean_0, self.noise_mean_1), self.noise_modes,
        )


@dataclass(frozen=True)
class CharacterizeConfig:
    n_disjoint_batches: int = 4
    symmetric_eta: float = 0.085
    symmetric_mean_idlers: tuple[float, ...] = (1.5, 3.0, 4.5, 6.0)


@dataclass(frozen=True)
class DiscriminateConfig:
    batch_sizes: tuple[int, ...] = (20000, 40000)
    n_batches: int = 5000
    perr_batch_sizes: tuple[int, ...] = ()
    threshold_mean: float | None = None
    threshold_R: float | None = None


@dataclass(frozen=True)
class KeysimConfig:
    key_length: int = 400
    batch_sizes: tuple[int, ...] = (20000, 40000)
    n_keys: int = 1
    mode: str = "simulation"
    k: float = 2.0
    n_sigma_batches: int = 1000


@dataclass(frozen=True)
class AttackConfig:
    fractions: tuple[float, ...] = ()
    batch_size: int = 40000
    n_realizations: int = 5000
    resend_mean: str = "exact"
    sigma: str = "reference"
    k: float = 2.0


@dataclass(frozen=True)
class CalibrateConfig:
    n_shots: int = 100000
    mean: float = 3.44
    modes: float = 350.0
    gain: float = 1.0
    noise_sigma: float = 0.2
    bin_width: float | None = None
    min_prominence: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelConfig
    seed: int
    n_shots: int
    measured_R: tuple[float, ...] = ()
    sigma_ref: float = 0.002
    threads: int = 1
    save_datasets: bool = False
    gnuplot: bool = True
    characterize: CharacterizeConfig = field(default_factory=CharacterizeConfig)
    discriminate: DiscriminateConfig = field(default_factory=DiscriminateConfig)
    keysim: KeysimConfig = field(default_factory=KeysimConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    calibrate: CalibrateConfig = field(default_factory=CalibrateConfig)

    def __post_init__(self):
        _validate(self)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form (independent of file layout).

        ``threads`` is left out: it changes how fast results come, not what they are.
        """
        d = self.to_dict()
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def provenance(self) -> str:
        return f"# twinbeam config_sha256={self.config_hash} seed={self.seed}"


def _validate(cfg: ExperimentConfig) -> None:
    try:
        cfg.channel.params()
    except ParameterError as exc:
        raise ConfigError(f"[channel] {exc}") from None
    if cfg.n_shots < 2:
        raise ConfigError(f"n_shots must be >= 2, got {cfg.n_shots}")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.sigma_ref <= 0:
        raise ConfigError("sigma_ref must be > 0")
    d = cfg.discriminate
    if d.n_batches < 2 or any(b < 2 for b in d.batch_sizes + d.perr_batch_sizes):
        raise ConfigError("[discriminate] needs n_batches >= 2 and batch sizes >= 2")
    ks = cfg.keysim
    if ks.key_length < 1:
        raise ConfigError(f"[keysim] key_length must be >= 1, got {ks.key_length}")
    if ks.mode not in ("simulation", "rates"):
        raise ConfigError("[keysim] mode must be 'simulation' or 'rates'")
    if ks.n_keys < 1 or ks.k <= 0 or ks.n_sigma_batches < 2:
        raise ConfigError("[keysim] needs n_keys >= 1, k > 0, n_sigma_batches >= 2")
    a = cfg.attack
    if any(not 0 <= f <= 1 for f in a.fractions):
        raise ConfigError("[attack] fractions must lie in [0, 1]")
    if a.resend_mean not in ("exact", "estimated"):
        raise ConfigError("[attack] resend_mean must be 'exact' or 'estimated'")
    if a.sigma not in ("reference", "bootstrap"):
        try:
            if float(a.sigma) <= 0:
                raise ValueError
        except ValueError:
            raise ConfigError("[attack] sigma must be 'reference', 'bootstrap' or a positive number") from None
    c = cfg.calibrate
    if c.n_shots < 2 or c.gain <= 0 or c.noise_sigma < 0:
        raise ConfigError("[calibrate] needs n_shots >= 2, gain > 0, noise_sigma >= 0")
    ch = cfg.characterize
    if not 0 < ch.symmetric_eta <= 1 or any(m <= 0 for m in ch.symmetric_mean_idlers):
        raise ConfigError("[characterize] symmetric_eta in (0, 1] and positive mean levels required")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(float(x)) for x in text.replace(";", ",").split(",") if x.strip())


def _opt_float(text: str) -> float | None:
    return float(text) if text.strip() else None


def default_config_path() -> Path:
    return Path(str(resources.files("twinbeam") / "data" / SHIPPED_CONFIG))


def load_config(path=None) -> ExperimentConfig:
    """Parse a ``.cfg`` file; ``None`` loads the shipped measured configuration."""
    path = Path(path) if path is not None else default_config_path()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    def sec(name):
        return cp[name] if cp.has_section(name) else {}

    try:
        ch = cp["channel"]
        channel = ChannelConfig(
            eta=float(ch["eta"]),
            t=float(ch["t"]),
            mean_idler=float(ch["mean_idler"]),
            modes=float(ch["modes"]),
            noise_mean_0=float(ch.get("noise_mean_0", "0")),
            noise_mean_1=float(ch.get("noise_mean_1", "0")),
            noise_modes=float(ch.get("noise_modes", "1")),
        )
        ref, run = sec("reference"), sec("run")
        chz, dis, key, att, cal = (sec(s) for s in ("characterize", "discriminate", "keysim", "attack", "calibrate"))
        return ExperimentConfig(
            channel=channel,
            seed=int(run.get("seed", "0")),
            n_shots=int(float(run.get("n_shots", "100000"))),
            measured_R=_floats(ref.get("measured_R", "")),
            sigma_ref=float(ref.get("sigma_ref", "0.002")),
            threads=int(run.get("threads", "1")),
            save_datasets=run.get("save_datasets", "false").strip().lower() in ("1", "true", "yes", "on"),
            gnuplot=run.get("gnuplot", "true").strip().lower() in ("1", "true", "yes", "on"),
            characterize=CharacterizeConfig(
                n_disjoint_batches=int(chz.get("n_disjoint_batches", "4")),
                symmetric_eta=float(chz.get("symmetric_eta", "0.085")),
                symmetric_mean_idlers=_floats(chz.get("symmetric_mean_idlers", "1.5, 3, 4.5, 6")),
            ),
            discriminate=DiscriminateConfig(
                batch_sizes=_ints(dis.get("batch_sizes", "20000, 40000")),
                n_batches=int(dis.get("n_batches", "5000")),
                perr_batch_sizes=_ints(dis.get("perr_batch_sizes", "")),
                threshold_mean=_opt_float(dis.get("threshold_mean", "")),
                threshold_R=_opt_float(dis.get("threshold_R", "")),
            ),
            keysim=KeysimConfig(
                key_length=int(key.get("key_length", "400")),
                batch_sizes=_ints(key.get("batch_sizes", "20000, 40000")),
                n_keys=int(key.get("n_keys", "1")),
                mode=key.get("mode", "simulation").strip(),
                k=float(key.get("k", "2")),
                n_sigma_batches=int(key.get("n_sigma_batches", "1000")),
            ),
            attack=AttackConfig(
                fractions=_floats(att.get("fractions", "")),
                batch_size=int(att.get("batch_size", "40000")),
                n_realizations=int(att.get("n_realizations", "5000")),
                resend_mean=att.get("resend_mean", "exact").strip(),
                sigma=att.get("sigma", "reference").strip(),
                k=float(att.get("k", "2")),
            ),
            calibrate=CalibrateConfig(
                n_shots=int(float(cal.get("n_shots", "100000"))),
                mean=float(cal.get("mean", "3.44")),
                modes=float(cal.get("modes", "350")),
                gain=float(cal.get("gain", "1")),
                noise_sigma=float(cal.get("noise_sigma", "0.2")),
                bin_width=_opt_float(cal.get("bin_width", "")),
                min_prominence=float(cal.get("min_prominence", "0.05")),
            ),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing required key {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
