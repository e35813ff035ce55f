"""Deterministic simulator of processor current-management throttling and the
covert channels that its timing side-effects enable."""

from .core import BASELINE, CLASS_ORDER, DEFAULT_CDYN, InstructionClass, ThrottleMode
from .pdn import IccModel, LoadLineParams, VRKind, guardband_delta, load_voltage
from .pmu import LimitsConfig, Pmu, PmuConfig, enforce_limits

__version__ = "0.1.0"
