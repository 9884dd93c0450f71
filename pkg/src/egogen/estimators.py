"""scikit-learn style wrappers around the functional core.

These let the sampling and generation steps sit in a
:class:`sklearn.pipeline.Pipeline` and expose ``get_params``/``set_params``.
"""

from __future__ import annotations

from typing import List, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points, check_positive
from .dataset import Demonstration, ObjectConfiguration
from .errors import ValidationError
from .generate import ANGLE_CAP, SCENE_VOXEL, STEP_CAP, GenerationSpec, _source_scene, generate
from .segment import CLOSE_THRESHOLD, HYSTERESIS, PROXIMITY_RADIUS, label_points, segment_by_gripper
from .vao import DEFAULT_N_POINTS, VaoConfig, apply_vao, fps_indices


class FarthestPointSampler(BaseEstimator, TransformerMixin):
    """Downsample an ``(m, 3)`` array to ``n_points`` rows by FPS."""

    def __init__(self, n_points=DEFAULT_N_POINTS, pad_policy="repeat"):
        self.n_points = n_points
        self.pad_policy = pad_policy

    def fit(self, X, y=None):
        check_positive(self.n_points, "n_points", integer=True)
        return self

    def transform(self, X):
        X = check_points(X)
        self.indices_ = fps_indices(X, check_positive(self.n_points, "n_points", integer=True), self.pad_policy)
        return X[self.indices_]


class VisibilityFilter(BaseEstimator, TransformerMixin):
    """Apply VAO to each demonstration in a list."""

    def __init__(self, n_points=DEFAULT_N_POINTS, pad_policy="repeat", raster_occlusion=None):
        self.n_points = n_points
        self.pad_policy = pad_policy
        self.raster_occlusion = raster_occlusion

    def _config(self) -> VaoConfig:
        raster = tuple(self.raster_occlusion) if self.raster_occlusion is not None else None
        return VaoConfig(n_points=self.n_points, pad_policy=self.pad_policy, raster_occlusion=raster)

    def fit(self, X, y=None):
        self._config()
        return self

    def transform(self, X: Sequence[Demonstration]) -> List[Demonstration]:
        cfg = self._config()
        return [apply_vao(cfg, d) for d in X]


class DemoGenerator(BaseEstimator, TransformerMixin):
    """Segment source demonstrations once, then generate for any targets.

    ``fit`` takes a list of source demonstrations; ``transform`` takes a list
    of target configurations and returns one generated demonstration per
    (source, target) pair, source major.
    """

    def __init__(
        self,
        step_cap=STEP_CAP,
        angle_cap=ANGLE_CAP,
        scene_voxel=SCENE_VOXEL,
        proximity_radius=PROXIMITY_RADIUS,
        close_threshold=CLOSE_THRESHOLD,
        hysteresis=HYSTERESIS,
        perturbation=(0.0, 0.0),
        seed=0,
    ):
        self.step_cap = step_cap
        self.angle_cap = angle_cap
        self.scene_voxel = scene_voxel
        self.proximity_radius = proximity_radius
        self.close_threshold = close_threshold
        self.hysteresis = hysteresis
        self.perturbation = perturbation
        self.seed = seed

    def fit(self, X: Sequence[Demonstration], y=None):
        if not X:
            raise ValidationError("no source demonstrations")
        check_positive(self.step_cap, "step_cap")
        check_positive(self.angle_cap, "angle_cap")
        self.sources_ = list(X)
        self.segmentations_ = [
            segment_by_gripper(d, self.proximity_radius, self.close_threshold, self.hysteresis) for d in X
        ]
        self.labels_ = [
            label_points(d, seg=s, close_threshold=self.close_threshold, hysteresis=self.hysteresis,
                         proximity_radius=self.proximity_radius)
            for d, s in zip(X, self.segmentations_)
        ]
        self._scenes = [None] * len(X)
        return self

    def spec(self, i: int, target: ObjectConfiguration) -> GenerationSpec:
        check_is_fitted(self, "segmentations_")
        return GenerationSpec(
            self.sources_[i], self.segmentations_[i], self.labels_[i], target,
            perturbation=tuple(self.perturbation), seed=self.seed,
            step_cap=self.step_cap, angle_cap=self.angle_cap, scene_voxel=self.scene_voxel,
            close_threshold=self.close_threshold, hysteresis=self.hysteresis,
        )

    def generate_one(self, i: int, target: ObjectConfiguration) -> Demonstration:
        spec = self.spec(i, target)
        if self._scenes[i] is None:
            self._scenes[i] = _source_scene(spec)
        return generate(spec, _scene=self._scenes[i])

    def transform(self, X: Sequence[ObjectConfiguration]) -> List[Demonstration]:
        check_is_fitted(self, "segmentations_")
        return [self.generate_one(i, t) for i in range(len(self.sources_)) for t in X]
