"""Synthetic FinFET-like surrogate and voltage-grid datasets.

The surrogate is a fixed set of smooth closed forms for drain current and
terminal charges over the bias box 0 V..0.82 V on both axes.  It stands in
for a foundry compact model: infinitely differentiable, monotone where the
real device is, and cheap enough to tabulate densely.  Charges are kept in
units of 1e-18 F times volts (order 1..50 numbers) so the fitting targets
are well scaled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

V_MAX = 0.82
MASTER_STEP_MV = 5
TRAIN_STEPS_MV = (5, 10, 20, 50)

THERMAL_VOLTAGE = 0.0258
THRESHOLD_VOLTAGE = 0.25
IDEALITY = 1.2
GAIN = 5e-3               # A / V^2
CHARGE_PER_VOLT = 60.0    # in 1e-18 F
CHARGE_UNIT = 1e-18       # F, scale between stored charge numbers and coulombs

FIELD_NAMES = ("I_D", "Q_D", "Q_S", "Q_G")


class VoltageRangeError(ValueError):
    """Raised for bias points outside the covered quadrant."""


def gate_drive(v_g):
    """Smooth gate-overdrive curve: soft knee at the threshold voltage."""
    scale = IDEALITY * THERMAL_VOLTAGE
    return scale * np.logaddexp(0.0, (np.asarray(v_g, dtype=float)
                                      - THRESHOLD_VOLTAGE) / scale)


def surrogate_fields(v_d, v_g) -> dict:
    """All four outputs for broadcastable voltage arrays (no range check)."""
    v_d = np.asarray(v_d, dtype=float)
    v_g = np.asarray(v_g, dtype=float)
    drive = gate_drive(v_g)
    i_d = GAIN * drive**2 * np.tanh(v_d / (0.08 + 0.6 * drive))
    q_s = -CHARGE_PER_VOLT * drive
    q_d = -CHARGE_PER_VOLT * drive * (0.35 + 0.25 * np.tanh((v_d - 0.3) / 0.2))
    q_g = -(q_s + q_d) * 1.5
    return {"I_D": i_d, "Q_D": q_d, "Q_S": q_s, "Q_G": q_g}


@dataclass(frozen=True)
class DevicePoint:
    """One bias point: current in amperes, charges in CHARGE_UNIT units."""

    v_d: float
    v_g: float
    i_d: float
    q_d: float
    q_s: float
    q_g: float


def surrogate_eval(v_d: float, v_g: float) -> DevicePoint:
    """Evaluate the surrogate at one bias point, rejecting out-of-range bias."""
    for name, v in (("V_D", v_d), ("V_G", v_g)):
        if not 0.0 <= v <= V_MAX:
            raise VoltageRangeError(f"{name}={v} outside [0, {V_MAX}]")
    f = surrogate_fields(v_d, v_g)
    return DevicePoint(float(v_d), float(v_g),
                       float(f["I_D"]), float(f["Q_D"]),
                       float(f["Q_S"]), float(f["Q_G"]))


def bulk_charge(q_d, q_s, q_g):
    """Remaining terminal charge under the zero-total-charge convention."""
    return -(np.asarray(q_d) + np.asarray(q_s) + np.asarray(q_g))


# Mid-range log-ampere level over the bias box; exponential heads start
# here because a zero bias would mean e^0 = 1 A, thirty log-units high.
LOG_CURRENT_INIT = -12.5


def convert_current(y):
    """Network current head emits log-amperes; invert to amperes."""
    return np.exp(np.asarray(y, dtype=float))


def convert_charge(y):
    """Network charge head emits scaled charge; convert to coulombs."""
    return np.asarray(y, dtype=float) * CHARGE_UNIT


def normalize_voltages(v):
    """Map raw volts onto the unit interval used as network input."""
    return np.asarray(v, dtype=float) / V_MAX


@dataclass
class VoltageGridDataset:
    """Dense master grid plus a train/test split by sub-sampling stride.

    The master grid steps 5 mV per axis from 0 V to 0.82 V (165 points per
    axis).  The train split keeps every point whose coordinates are both
    multiples of ``step_mv``; everything else is test.  Fields are stored as
    (n_vd, n_vg) matrices over the master grid.
    """

    step_mv: int
    vd_axis: np.ndarray
    vg_axis: np.ndarray
    fields: dict = field(repr=False)

    @property
    def train_indices(self) -> np.ndarray:
        stride = self.step_mv // MASTER_STEP_MV
        return np.arange(0, self.vd_axis.size, stride)

    @property
    def train_vd_axis(self) -> np.ndarray:
        return self.vd_axis[self.train_indices]

    @property
    def train_vg_axis(self) -> np.ndarray:
        return self.vg_axis[self.train_indices]

    @property
    def train_mask(self) -> np.ndarray:
        on_axis = np.zeros(self.vd_axis.size, dtype=bool)
        on_axis[self.train_indices] = True
        return on_axis[:, None] & on_axis[None, :]

    @property
    def train_count(self) -> int:
        return self.train_indices.size ** 2

    @property
    def test_count(self) -> int:
        return self.vd_axis.size * self.vg_axis.size - self.train_count

    def train_field(self, name: str) -> np.ndarray:
        """Field values on the train sub-grid, shape (n_train, n_train)."""
        idx = self.train_indices
        return self.fields[name][np.ix_(idx, idx)]

    def test_values(self, name: str) -> np.ndarray:
        return self.fields[name][~self.train_mask]

    def train_inputs(self) -> np.ndarray:
        """Train bias points as (N, 2) columns [V_D, V_G], row-major in V_D."""
        vd, vg = np.meshgrid(self.train_vd_axis, self.train_vg_axis, indexing="ij")
        return np.column_stack([vd.ravel(), vg.ravel()])

    def test_inputs(self) -> np.ndarray:
        vd, vg = np.meshgrid(self.vd_axis, self.vg_axis, indexing="ij")
        keep = ~self.train_mask
        return np.column_stack([vd[keep], vg[keep]])

    @cached_property
    def train_points(self) -> list:
        return self._points(True)

    @cached_property
    def test_points(self) -> list:
        return self._points(False)

    def _points(self, train: bool) -> list:
        mask = self.train_mask if train else ~self.train_mask
        vd, vg = np.meshgrid(self.vd_axis, self.vg_axis, indexing="ij")
        f = self.fields
        return [
            DevicePoint(float(vd[i, j]), float(vg[i, j]),
                        float(f["I_D"][i, j]), float(f["Q_D"][i, j]),
                        float(f["Q_S"][i, j]), float(f["Q_G"][i, j]))
            for i, j in zip(*np.nonzero(mask))
        ]


def generate_dataset(step_mv: int) -> VoltageGridDataset:
    """Tabulate the surrogate on the master grid and split by stride."""
    if step_mv not in TRAIN_STEPS_MV:
        raise ValueError(f"step_mv must be one of {TRAIN_STEPS_MV}, got {step_mv}")
    mv = np.arange(0, int(round(V_MAX * 1000)) + 1, MASTER_STEP_MV)
    axis = mv / 1000.0
    vd, vg = np.meshgrid(axis, axis, indexing="ij")
    fields = surrogate_fields(vd, vg)
    return VoltageGridDataset(step_mv=step_mv, vd_axis=axis, vg_axis=axis,
                              fields=fields)


# ----------------------------------------------------------------------
# finite differences on the train sub-grid
# ----------------------------------------------------------------------

def derivative_stencil(n: int, h: float) -> np.ndarray:
    """Dense first-derivative matrix: central rows inside, second-order
    one-sided rows at both ends."""
    if n < 3:
        raise ValueError(f"need at least 3 points along the axis, got {n}")
    d = np.zeros((n, n))
    for i in range(1, n - 1):
        d[i, i - 1] = -0.5 / h
        d[i, i + 1] = 0.5 / h
    d[0, :3] = np.array([-1.5, 2.0, -0.5]) / h
    d[-1, -3:] = np.array([0.5, -2.0, 1.5]) / h
    return d


def grid_derivative(dataset: VoltageGridDataset, fld: str, axis: str,
                    order: int = 1) -> np.ndarray:
    """Finite-difference derivative of a field over the train sub-grid.

    ``axis`` selects the differentiation direction ("V_D" rows or "V_G"
    columns); ``order`` 2 applies the same stencil twice.
    """
    if axis not in ("V_D", "V_G"):
        raise ValueError(f"axis must be 'V_D' or 'V_G', got {axis!r}")
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    values = dataset.train_field(fld) if isinstance(fld, str) else np.asarray(fld)
    h = dataset.step_mv / 1000.0
    n = values.shape[0 if axis == "V_D" else 1]
    d = derivative_stencil(n, h)
    for _ in range(order):
        values = d @ values if axis == "V_D" else values @ d.T
    return values


# ----------------------------------------------------------------------
# plain-text persistence
# ----------------------------------------------------------------------

CSV_HEADER = ["V_D", "V_G", "I_D", "Q_D", "Q_S", "Q_G", "split"]


def save_dataset(dataset: VoltageGridDataset, path) -> None:
    """Write every master-grid row as delimited text, train rows first in
    row-major order, then test rows."""
    mask = dataset.train_mask
    vd, vg = np.meshgrid(dataset.vd_axis, dataset.vg_axis, indexing="ij")
    f = dataset.fields
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for split, sel in (("train", mask), ("test", ~mask)):
            rows = np.nonzero(sel)
            for i, j in zip(*rows):
                writer.writerow(
                    ["%.17g" % vd[i, j], "%.17g" % vg[i, j],
                     "%.17g" % f["I_D"][i, j], "%.17g" % f["Q_D"][i, j],
                     "%.17g" % f["Q_S"][i, j], "%.17g" % f["Q_G"][i, j],
                     split]
                )


def load_dataset(path) -> VoltageGridDataset:
    """Rebuild a dataset from `save_dataset` output, verifying the lattice."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        for row in reader:
            rows.append(row)
    vd_mv = np.array([int(round(float(r[0]) * 1000)) for r in rows])
    vg_mv = np.array([int(round(float(r[1]) * 1000)) for r in rows])
    axis_mv = np.unique(vd_mv)
    if not np.array_equal(axis_mv, np.unique(vg_mv)):
        raise ValueError("V_D and V_G axes differ")
    step = int(np.diff(axis_mv).min())
    if step != MASTER_STEP_MV:
        raise ValueError(f"master grid must step {MASTER_STEP_MV} mV, got {step}")
    n = axis_mv.size
    lookup = {mv: i for i, mv in enumerate(axis_mv)}
    fields = {name: np.zeros((n, n)) for name in FIELD_NAMES}
    train_axis_mv = set()
    for r, dmv, gmv in zip(rows, vd_mv, vg_mv):
        i, j = lookup[int(dmv)], lookup[int(gmv)]
        for col, name in enumerate(FIELD_NAMES, start=2):
            fields[name][i, j] = float(r[col])
        if r[6] == "train":
            train_axis_mv.add(int(dmv))
            train_axis_mv.add(int(gmv))
    train_sorted = np.array(sorted(train_axis_mv))
    step_mv = int(np.diff(train_sorted).min()) if train_sorted.size > 1 else MASTER_STEP_MV
    if step_mv not in TRAIN_STEPS_MV:
        raise ValueError(f"inferred train step {step_mv} mV is not supported")
    return VoltageGridDataset(step_mv=step_mv, vd_axis=axis_mv / 1000.0,
                              vg_axis=axis_mv / 1000.0, fields=fields)
