"""Declarative change-point model specifications and scenario presets."""

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .hazards import CTE_LINK, FREE, ZERO, is_shared, shared

FAMILIES = ("weibull", "exponential")
MAX_CHANGEPOINTS = 2
TRT = "trt"
INTERCEPT = "Intercept"


class ScenarioPreset(enum.Enum):
    """Constraint patterns for the joint treatment/comparator hazard."""

    STEP_HR_A = "step_hr_a"  # continuous baseline, interval-specific HR
    STEP_HR_B = "step_hr_b"  # per-interval baseline scale
    STEP_HR_C = "step_hr_c"  # per-interval baseline scale and shape
    STEP_HR_D = "step_hr_d"  # non-PH after the change-point (trt on shape)
    TREATMENT_DELAY = "treatment_delay"
    LOSS_OF_EFFECT = "loss_of_effect"
    CONVERGING_HAZARDS = "converging_hazards"
    ONE_ARM_COMMON_AFTER = "one_arm_common_after"


@dataclass(frozen=True)
class ModelSpec:
    """Change-point model: segment family, constraint masks, scenario flags.

    ``covariates`` starts with "Intercept"; masks are p x (k+1) arrays of
    constraint tags over the scale/shape coefficient matrices. ``cte`` marks a
    converging-hazards model (adds the waning rate omega as a parameter);
    ``arm_restriction`` names a 0/1 covariate whose arm alone is split at the
    change-points.
    """

    family: str
    k: int
    covariates: tuple[str, ...]
    scale_mask: np.ndarray
    shape_mask: np.ndarray
    cte: bool = False
    arm_restriction: str | None = None
    preset: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        if not 0 <= self.k <= MAX_CHANGEPOINTS:
            raise ValidationError(
                f"k must be in 0..{MAX_CHANGEPOINTS}, got {self.k} "
                "(more change-points are rarely identifiable)"
            )
        if not self.covariates or self.covariates[0] != INTERCEPT:
            raise ValidationError("covariates must start with 'Intercept'")
        if len(set(self.covariates)) != len(self.covariates):
            raise ValidationError("duplicate covariate names")
        p, cols = len(self.covariates), self.k + 1
        for label, mask in (("scale", self.scale_mask), ("shape", self.shape_mask)):
            if mask.shape != (p, cols):
                raise ValidationError(
                    f"{label} mask must be {p}x{cols}, got {mask.shape}"
                )
        if self.family == "exponential" and any(
            tag != ZERO for tag in self.shape_mask.ravel()
        ):
            raise ValidationError("exponential family requires an all-zero shape mask")
        groups: dict[str, set[str]] = {"scale": set(), "shape": set()}
        for label, mask in (("scale", self.scale_mask), ("shape", self.shape_mask)):
            for tag in mask.ravel():
                if is_shared(tag):
                    groups[label].add(tag)
                elif tag not in (FREE, ZERO, CTE_LINK):
                    raise ValidationError(f"unknown constraint tag {tag!r} in {label} mask")
        if groups["scale"] & groups["shape"]:
            raise ValidationError("a shared group cannot span the scale and shape matrices")
        self._validate_cte()
        self._validate_arm_restriction()

    def _validate_cte(self):
        n_links = int(np.sum(self.scale_mask == CTE_LINK)) + int(
            np.sum(self.shape_mask == CTE_LINK)
        )
        if not self.cte:
            if n_links:
                raise ValidationError("cte_link tags require a converging-hazards spec")
            return
        if self.k < 1:
            raise ValidationError("converging hazards requires at least one change-point")
        if TRT not in self.covariates:
            raise ValidationError("converging hazards requires a 'trt' covariate")
        trt_row = self.covariates.index(TRT)
        if self.scale_mask[trt_row, self.k] != CTE_LINK or n_links != 1:
            raise ValidationError(
                "converging hazards requires exactly one cte_link tag on the "
                "treatment row of the final scale interval"
            )
        if self.scale_mask[trt_row, self.k - 1] != FREE:
            raise ValidationError(
                "converging hazards requires a free treatment coefficient in the "
                "interval preceding the waning onset"
            )
        if any(tag != ZERO for tag in self.shape_mask[trt_row]):
            raise ValidationError(
                "converging hazards requires a common shape across arms "
                "(treatment row of the shape mask must be zero)"
            )
        if self.arm_restriction is not None:
            raise ValidationError("cte and arm_restriction cannot be combined")

    def _validate_arm_restriction(self):
        if self.arm_restriction is None:
            return
        if self.arm_restriction not in self.covariates:
            raise ValidationError(
                f"arm_restriction covariate {self.arm_restriction!r} not in spec"
            )
        if self.k < 1:
            raise ValidationError("arm_restriction requires at least one change-point")
        row = self.covariates.index(self.arm_restriction)
        for label, mask in (("scale", self.scale_mask), ("shape", self.shape_mask)):
            if mask[row, self.k] != ZERO:
                raise ValidationError(
                    "arm_restriction requires equal hazards after the final "
                    f"change-point ({label} mask must zero {self.arm_restriction!r} "
                    "in the final interval)"
                )

    @property
    def p(self) -> int:
        return len(self.covariates)

    @property
    def trt_index(self) -> int | None:
        return self.covariates.index(TRT) if TRT in self.covariates else None

    def to_json_dict(self) -> dict:
        out = {
            "family": self.family,
            "k": self.k,
            "covariates": list(self.covariates),
            "scale_mask": [list(row) for row in self.scale_mask],
            "shape_mask": [list(row) for row in self.shape_mask],
        }
        if self.cte:
            out["cte"] = True
        if self.arm_restriction is not None:
            out["arm_restriction"] = self.arm_restriction
        if self.preset is not None:
            out["preset"] = self.preset
        return out

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelSpec":
        try:
            scale_mask = np.array(d["scale_mask"], dtype=object)
            shape_mask = np.array(d["shape_mask"], dtype=object)
            return cls(
                family=d["family"],
                k=int(d["k"]),
                covariates=tuple(d["covariates"]),
                scale_mask=scale_mask,
                shape_mask=shape_mask,
                cte=bool(d.get("cte", False)),
                arm_restriction=d.get("arm_restriction"),
                preset=d.get("preset"),
            )
        except KeyError as exc:
            raise ValidationError(f"model spec is missing field {exc}") from None


def _mask(p: int, cols: int, fill: str) -> np.ndarray:
    m = np.empty((p, cols), dtype=object)
    m[:] = fill
    return m


def expand_preset(
    preset: ScenarioPreset,
    covariates: Sequence[str],
    k: int,
    family: str = "weibull",
) -> ModelSpec:
    """Expand a scenario preset into a fully-masked ModelSpec.

    ``covariates`` must include "trt"; "Intercept" is prepended when absent.
    k = 0 collapses every preset to the standard parametric model. Extra
    covariates get interval-constant effects on the scale and none on the
    shape.
    """
    if not isinstance(preset, ScenarioPreset):
        raise ValidationError(f"unknown preset {preset!r}")
    covs = [INTERCEPT] + [c for c in covariates if c != INTERCEPT]
    if TRT not in covs:
        raise ValidationError(f"preset {preset.value} requires a 'trt' covariate")
    p = len(covs)
    trt_row = covs.index(TRT)
    cols = k + 1

    if k == 0:
        scale = _mask(p, 1, FREE)
        shape = _mask(p, 1, ZERO)
        if family == "weibull":
            shape[0, 0] = FREE
        return ModelSpec(family, 0, tuple(covs), scale, shape, preset=preset.value)

    # scale: shared intercept and extras by default; shape: shared intercept only
    scale = _mask(p, cols, ZERO)
    scale[0, :] = shared("scale." + INTERCEPT)
    for r in range(1, p):
        if r != trt_row:
            scale[r, :] = shared(f"scale.{covs[r]}")
    shape = _mask(p, cols, ZERO)
    if family == "weibull":
        shape[0, :] = shared("shape." + INTERCEPT)

    cte = False
    arm_restriction = None
    if preset is ScenarioPreset.STEP_HR_A:
        scale[trt_row, :] = FREE
    elif preset in (ScenarioPreset.STEP_HR_B, ScenarioPreset.STEP_HR_C, ScenarioPreset.STEP_HR_D):
        scale[trt_row, :] = FREE
        scale[0, :] = FREE
        if preset is not ScenarioPreset.STEP_HR_B and family == "weibull":
            shape[0, :] = FREE
        if preset is ScenarioPreset.STEP_HR_D:
            if family != "weibull":
                raise ValidationError("a treatment effect on the shape needs the weibull family")
            shape[trt_row, 1:] = FREE
    elif preset is ScenarioPreset.TREATMENT_DELAY:
        scale[trt_row, 0] = ZERO
        scale[trt_row, 1:] = FREE
    elif preset is ScenarioPreset.LOSS_OF_EFFECT:
        scale[trt_row, :k] = FREE
        scale[trt_row, k] = ZERO
    elif preset is ScenarioPreset.CONVERGING_HAZARDS:
        scale[trt_row, :k] = FREE
        scale[trt_row, k] = CTE_LINK
        cte = True
    elif preset is ScenarioPreset.ONE_ARM_COMMON_AFTER:
        scale[trt_row, :k] = FREE
        scale[trt_row, k] = ZERO
        if family == "weibull":
            shape[trt_row, :k] = FREE
            shape[trt_row, k] = ZERO
        arm_restriction = TRT
    else:  # pragma: no cover
        raise ValidationError(f"unhandled preset {preset!r}")

    return ModelSpec(
        family,
        k,
        tuple(covs),
        scale,
        shape,
        cte=cte,
        arm_restriction=arm_restriction,
        preset=preset.value,
    )


def count_free_parameters(spec: ModelSpec) -> int:
    """Sampler dimensionality: free entries, one per shared group, k, omega."""
    n = spec.k + (1 if spec.cte else 0)
    groups: set[str] = set()
    for mask in (spec.scale_mask, spec.shape_mask):
        for tag in mask.ravel():
            if tag == FREE:
                n += 1
            elif is_shared(tag):
                groups.add(tag)
    return n + len(groups)
