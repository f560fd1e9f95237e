"""Scenario definition: geometry and RF configuration of a positioning run.

A :class:`Scenario` bundles everything that is fixed during one
localization occasion: the RIS pose and panel layout, the UE positions
and clock offsets, the OFDM numerology, transmit powers, the noise
model, optional position priors, and optional scatter points.  It is
immutable after construction and validated on creation.

Unit conventions (also used by the config files): lengths in meters,
times in seconds, frequencies in Hz, powers in watts internally with
dBm accepted at the config layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import toml

from .errors import ValidationError

SPEED_OF_LIGHT = 3.0e8  # m/s


def dbm_to_watt(value):
    return 10.0 ** (np.asarray(value, dtype=float) / 10.0) / 1000.0


def watt_to_dbm(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float) * 1000.0)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Scenario:
    """Immutable geometric and RF configuration.

    Optional fields left as ``None`` are derived in ``__post_init__``:
    wavelength defaults to c / carrier frequency, element spacing to a
    quarter wavelength, the noise variance to nf * N0 * df, prior means
    to the true UE positions.
    """

    ue_positions: np.ndarray                 # (K, 3) m, global frame
    ris_center: np.ndarray = None            # (3,) m; default origin
    ris_rows: int = 11
    ris_cols: int = 11
    ris_element_spacing: float = None        # m; default wavelength / 4
    carrier_frequency: float = 28.0e9        # Hz
    wavelength: float = None                 # m; default c / f_c
    clock_offsets: np.ndarray = None         # (K,) s; default zeros
    reference_ue: int = 0
    n_subcarriers: int = 3000
    subcarrier_spacing: float = 120.0e3      # Hz
    slots_per_ue: int = 40
    tx_powers: np.ndarray = None             # (K,) W
    total_power: float = None                # W
    noise_figure_db: float = 8.0
    noise_psd_dbm_hz: float = -174.0
    noise_variance: float = None             # W; default nf * N0 * df
    prior_means: np.ndarray = None           # (K, 3) m; default true positions
    prior_covs: np.ndarray = None            # (K, 3, 3) m^2; default zeros
    sp_positions: tuple = None               # per receiving UE: (S_j, 3) m
    rcs: float = 0.0                         # m^2
    speed_of_light: float = SPEED_OF_LIGHT   # m/s

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)

        ue = np.atleast_2d(np.asarray(self.ue_positions, dtype=float))
        if ue.ndim != 2 or ue.shape[1] != 3:
            raise ValidationError("ue_positions must be a (K, 3) array")
        k = ue.shape[0]
        if k < 3:
            raise ValidationError("feasibility: K >= 3 required")
        set_("ue_positions", _readonly(ue))

        center = np.zeros(3) if self.ris_center is None else np.asarray(self.ris_center, float)
        if center.shape != (3,):
            raise ValidationError("ris_center must be a 3-vector")
        set_("ris_center", _readonly(center))

        if np.any(ue[:, 0] - center[0] < 0.0):
            raise ValidationError("UE positions must have x >= x_RIS (in front of the RIS plane)")

        if self.ris_rows < 1 or self.ris_cols < 1:
            raise ValidationError("RIS panel needs at least one row and one column")

        if self.wavelength is None:
            set_("wavelength", self.speed_of_light / self.carrier_frequency)
        if self.wavelength <= 0:
            raise ValidationError("wavelength must be positive")
        if self.ris_element_spacing is None:
            set_("ris_element_spacing", self.wavelength / 4.0)
        if self.ris_element_spacing <= 0:
            raise ValidationError("ris_element_spacing must be positive")

        offs = np.zeros(k) if self.clock_offsets is None else np.asarray(self.clock_offsets, float)
        if offs.shape != (k,):
            raise ValidationError("clock_offsets must have one entry per UE")
        if not (0 <= self.reference_ue < k):
            raise ValidationError("reference_ue out of range")
        if offs[self.reference_ue] != 0.0:
            raise ValidationError("clock offset of the reference UE must be zero")
        set_("clock_offsets", _readonly(offs))

        if self.n_subcarriers < 1:
            raise ValidationError("n_subcarriers must be >= 1")
        if self.subcarrier_spacing <= 0:
            raise ValidationError("subcarrier_spacing must be positive")
        if self.slots_per_ue < 2 or self.slots_per_ue % 2 != 0:
            raise ValidationError("slots_per_ue must be even (orthogonal slot pairing)")

        if self.tx_powers is None and self.total_power is None:
            raise ValidationError("either tx_powers or total_power is required")
        if self.tx_powers is None:
            set_("tx_powers", np.full(k, self.total_power / k))
        powers = np.asarray(self.tx_powers, dtype=float)
        if powers.ndim == 0:
            powers = np.full(k, float(powers))
        if powers.shape != (k,):
            raise ValidationError("tx_powers must have one entry per UE")
        if np.any(powers <= 0.0):
            raise ValidationError("tx powers must be strictly positive")
        set_("tx_powers", _readonly(powers))
        if self.total_power is None:
            set_("total_power", float(powers.sum()))
        elif not math.isclose(powers.sum(), self.total_power, rel_tol=1e-9):
            raise ValidationError("sum of tx_powers must equal total_power")

        if self.noise_variance is None:
            var = dbm_to_watt(self.noise_figure_db + self.noise_psd_dbm_hz) * self.subcarrier_spacing
            set_("noise_variance", float(var))
        if self.noise_variance < 0:
            raise ValidationError("noise_variance must be non-negative")

        means = ue if self.prior_means is None else np.asarray(self.prior_means, float)
        if means.shape != (k, 3):
            raise ValidationError("prior_means must be a (K, 3) array")
        set_("prior_means", _readonly(means))
        covs = np.zeros((k, 3, 3)) if self.prior_covs is None else np.asarray(self.prior_covs, float)
        if covs.shape == (3, 3):
            covs = np.tile(covs, (k, 1, 1))
        if covs.shape != (k, 3, 3):
            raise ValidationError("prior_covs must be a (K, 3, 3) array")
        for cov in covs:
            if not np.allclose(cov, cov.T):
                raise ValidationError("prior covariance must be symmetric")
            if np.min(np.linalg.eigvalsh(cov)) < -1e-12 * max(1.0, np.abs(cov).max()):
                raise ValidationError("prior covariance must be positive semidefinite")
        set_("prior_covs", _readonly(covs))

        if self.sp_positions is not None:
            sps = tuple(_readonly(np.atleast_2d(p)) if np.size(p) else _readonly(np.zeros((0, 3)))
                        for p in self.sp_positions)
            if len(sps) != k:
                raise ValidationError("sp_positions must list scatter points per receiving UE")
            for p in sps:
                if p.shape[1] != 3:
                    raise ValidationError("scatter point positions must be 3-vectors")
            set_("sp_positions", sps)
        if self.rcs < 0:
            raise ValidationError("rcs must be non-negative")

    # -- derived views ----------------------------------------------------

    @property
    def n_ues(self) -> int:
        return self.ue_positions.shape[0]

    @property
    def n_elements(self) -> int:
        return self.ris_rows * self.ris_cols

    @property
    def symbol_energies(self) -> np.ndarray:
        """Per-UE pilot symbol energy E_i with P_i = N * E_i."""
        return self.tx_powers / self.n_subcarriers

    @property
    def ue_positions_rel(self) -> np.ndarray:
        """UE positions in the RIS-centered frame."""
        return self.ue_positions - self.ris_center

    def sp_positions_for(self, receiver: int) -> np.ndarray:
        if self.sp_positions is None:
            return np.zeros((0, 3))
        return self.sp_positions[receiver]

    def with_tx_power_dbm(self, power_dbm) -> "Scenario":
        """Copy of the scenario with per-UE powers set from dBm value(s)."""
        watts = np.broadcast_to(dbm_to_watt(power_dbm), (self.n_ues,)).copy()
        return replace(self, tx_powers=watts, total_power=float(watts.sum()))

    def with_powers(self, watts) -> "Scenario":
        watts = np.asarray(watts, dtype=float)
        return replace(self, tx_powers=watts, total_power=float(watts.sum()))


class FarFieldCheck(NamedTuple):
    ratio: float
    far_field: bool


FAR_FIELD_RATIO = 10.0


def ris_element_positions(scenario: Scenario) -> np.ndarray:
    """Global positions of all RIS elements, shape (M, 3).

    The panel lies in the yz-plane, centered on ``ris_center``.  Layout
    is row-major over (z-row, y-column) with element (0, 0) at the most
    negative corner, so results are bit-reproducible across runs.
    """
    rows, cols, d = scenario.ris_rows, scenario.ris_cols, scenario.ris_element_spacing
    y = (np.arange(cols) - (cols - 1) / 2.0) * d
    z = (np.arange(rows) - (rows - 1) / 2.0) * d
    zz, yy = np.meshgrid(z, y, indexing="ij")
    pos = np.column_stack([np.zeros(rows * cols), yy.ravel(), zz.ravel()])
    return pos + scenario.ris_center


def check_far_field(scenario: Scenario) -> FarFieldCheck:
    """Ratio of closest UE distance to largest element offset.

    The planar-wavefront approximation is flagged as valid when the
    closest UE is at least ``FAR_FIELD_RATIO`` panel radii away.
    """
    d_ue = np.linalg.norm(scenario.ue_positions_rel, axis=1).min()
    d_el = np.linalg.norm(ris_element_positions(scenario) - scenario.ris_center, axis=1).max()
    if d_el == 0.0:  # single element panel
        ratio = math.inf if d_ue > 0 else 0.0
    else:
        ratio = d_ue / d_el
    return FarFieldCheck(ratio=ratio, far_field=ratio >= FAR_FIELD_RATIO)


# -- config file handling --------------------------------------------------


def _power_watts(section: dict, name: str, k: int = None):
    """Read `<name>_w` or `<name>_dbm` from a config section."""
    has_w, has_dbm = f"{name}_w" in section, f"{name}_dbm" in section
    if has_w and has_dbm:
        raise ValidationError(f"give either {name}_w or {name}_dbm, not both")
    if not has_w and not has_dbm:
        return None
    raw = section[f"{name}_w"] if has_w else section[f"{name}_dbm"]
    value = np.asarray(raw, dtype=float)
    if has_dbm:
        value = dbm_to_watt(value)
    if k is not None and value.ndim == 0:
        value = np.full(k, float(value))
    return value if value.ndim else float(value)


def scenario_from_config(config: dict) -> Scenario:
    """Build a Scenario from a parsed config tree."""
    try:
        ues = config["ues"]
        positions = np.asarray(ues["positions_m"], dtype=float)
    except KeyError as exc:
        raise ValidationError(f"missing required config key: {exc}") from exc
    k = len(positions)

    ris = config.get("ris", {})
    ofdm = config.get("ofdm", {})
    noise = config.get("noise", {})
    prior = config.get("prior", {})
    mp = config.get("multipath", {})

    prior_covs = None
    if "cov_m2" in prior:
        prior_covs = np.asarray(prior["cov_m2"], dtype=float)
    elif "sigma_m2" in prior:
        prior_covs = float(prior["sigma_m2"]) * np.eye(3)

    sp_positions = None
    if "sp_positions_m" in mp:
        sp_positions = tuple(np.asarray(p, dtype=float).reshape(-1, 3) for p in mp["sp_positions_m"])

    return Scenario(
        ue_positions=positions,
        ris_center=np.asarray(ris.get("center_m", [0.0, 0.0, 0.0]), dtype=float),
        ris_rows=int(ris.get("rows", 11)),
        ris_cols=int(ris.get("cols", 11)),
        ris_element_spacing=ris.get("element_spacing_m"),
        carrier_frequency=float(ofdm.get("carrier_frequency_hz", 28.0e9)),
        wavelength=ofdm.get("wavelength_m"),
        clock_offsets=np.asarray(ues.get("clock_offsets_s", np.zeros(k)), dtype=float),
        reference_ue=int(ues.get("reference", 0)),
        n_subcarriers=int(ofdm.get("n_subcarriers", 3000)),
        subcarrier_spacing=float(ofdm.get("subcarrier_spacing_hz", 120.0e3)),
        slots_per_ue=int(ofdm.get("slots_per_ue", 40)),
        tx_powers=_power_watts(ues, "tx_power", k),
        total_power=_power_watts(ues, "total_power"),
        noise_figure_db=float(noise.get("figure_db", 8.0)),
        noise_psd_dbm_hz=float(noise.get("psd_dbm_hz", -174.0)),
        noise_variance=noise.get("variance_w"),
        prior_means=np.asarray(prior["means_m"], dtype=float) if "means_m" in prior else None,
        prior_covs=prior_covs,
        sp_positions=sp_positions,
        rcs=float(mp.get("rcs_m2", 0.0)),
        speed_of_light=float(config.get("speed_of_light_m_s", SPEED_OF_LIGHT)),
    )


def load_scenario(config_text: str) -> Scenario:
    """Parse a TOML configuration document into a Scenario."""
    try:
        config = toml.loads(config_text)
    except toml.TomlDecodeError as exc:
        raise ValidationError(f"config parse failure: {exc}") from exc
    return scenario_from_config(config)


def load_scenario_file(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())


def scenario_to_config(s: Scenario) -> dict:
    """Config tree that reproduces ``s`` exactly through load_scenario."""
    config = {
        "speed_of_light_m_s": s.speed_of_light,
        "ris": {
            "center_m": s.ris_center.tolist(),
            "rows": s.ris_rows,
            "cols": s.ris_cols,
            "element_spacing_m": s.ris_element_spacing,
        },
        "ofdm": {
            "carrier_frequency_hz": s.carrier_frequency,
            "wavelength_m": s.wavelength,
            "n_subcarriers": s.n_subcarriers,
            "subcarrier_spacing_hz": s.subcarrier_spacing,
            "slots_per_ue": s.slots_per_ue,
        },
        "ues": {
            "positions_m": s.ue_positions.tolist(),
            "clock_offsets_s": s.clock_offsets.tolist(),
            "reference": s.reference_ue,
            "tx_power_w": s.tx_powers.tolist(),
            "total_power_w": s.total_power,
        },
        "noise": {
            "figure_db": s.noise_figure_db,
            "psd_dbm_hz": s.noise_psd_dbm_hz,
            "variance_w": s.noise_variance,
        },
        "prior": {
            "means_m": s.prior_means.tolist(),
            "cov_m2": s.prior_covs.tolist(),
        },
    }
    if s.sp_positions is not None or s.rcs != 0.0:
        config["multipath"] = {"rcs_m2": s.rcs}
        if s.sp_positions is not None:
            config["multipath"]["sp_positions_m"] = [p.tolist() for p in s.sp_positions]
    return config


def save_scenario(s: Scenario) -> str:
    return toml.dumps(scenario_to_config(s))


def reference_scenario(power_dbm=23.0, nominal_wavelength: bool = False, **overrides) -> Scenario:
    """Default desk-scale scenario: 3 UEs in a room with an 11x11 RIS at the origin.

    ``power_dbm`` sets every UE's transmit power.  With
    ``nominal_wavelength`` the wavelength is pinned to the rounded 1 cm
    value (0.25 cm element spacing) instead of the physical c / f_c.
    """
    params = dict(
        ue_positions=np.array([[4.0, 3.0, -1.0], [4.5, 1.0, -0.5], [5.0, -3.0, -1.0]]),
        carrier_frequency=28.0e9,
        n_subcarriers=3000,
        subcarrier_spacing=120.0e3,
        slots_per_ue=40,
        noise_figure_db=8.0,
        noise_psd_dbm_hz=-174.0,
    )
    if nominal_wavelength:
        params["wavelength"] = 0.01
    params.update(overrides)
    if "tx_powers" not in params and "total_power" not in params:
        k = len(params["ue_positions"])
        params["tx_powers"] = np.full(k, float(dbm_to_watt(power_dbm)))
    return Scenario(**params)
