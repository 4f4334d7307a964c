"""Physics-based forward model for aligned grayscale/thermal image pairs.

The thermal channel is driven by black-body radiation integrated over the
long-wave infrared band. Each material's temperature comes from a lumped
first-order thermal model forced by the 72-hour ambient temperature history,
so the rendered thermal appearance genuinely depends on recent weather, not
just on the materials in view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import CATEGORIES, Image, ModalPair, mean_normalize_array
from .errors import ContractViolation, DataError, require

PLANCK_H = 6.62607015e-34      # J s
SPEED_OF_LIGHT = 299792458.0   # m / s
BOLTZMANN_K = 1.380649e-23     # J / K

SUN_GAIN_K = 10.0  # equilibrium temperature offset at sun_exposure = 1

HISTORY_HOURS = 72


def planck_spectral_exitance(wavelength_um, temp_k):
    """Black-body spectral exitance in W * m^-2 * um^-1.

    2*pi*h*c^2 / (lambda^5 * (exp(h*c / (lambda*k_B*T)) - 1)) with the
    wavelength given in micrometers. Accepts scalars or arrays
    (broadcasting applies).
    """
    lam_um = np.asarray(wavelength_um, dtype=np.float64)
    temp = np.asarray(temp_k, dtype=np.float64)
    if np.any(lam_um <= 0.0) or np.any(temp <= 0.0):
        raise ContractViolation("wavelength and temperature must be positive")
    lam_m = lam_um * 1e-6
    c1 = 2.0 * math.pi * PLANCK_H * SPEED_OF_LIGHT**2
    x = PLANCK_H * SPEED_OF_LIGHT / (lam_m * BOLTZMANN_K * temp)
    with np.errstate(over="ignore"):
        denom = lam_m**5 * np.expm1(x)
    out = np.where(np.isinf(denom), 0.0, c1 / np.where(np.isinf(denom), 1.0, denom))
    out = out * 1e-6  # per meter -> per micrometer
    if np.isscalar(wavelength_um) and np.isscalar(temp_k):
        return float(out)
    return out


@dataclass(frozen=True)
class BandModel:
    """Sensor band and quadrature resolution for radiance integration."""

    lambda_min_um: float = 8.0
    lambda_max_um: float = 14.0
    intervals: int = 128  # composite Simpson intervals, must be even

    def __post_init__(self):
        require(0.0 < self.lambda_min_um < self.lambda_max_um,
                "band requires 0 < lambda_min < lambda_max")
        require(self.intervals >= 32 and self.intervals % 2 == 0,
                "quadrature needs an even interval count >= 32")

    def nodes_weights(self):
        n = self.intervals
        lam = np.linspace(self.lambda_min_um, self.lambda_max_um, n + 1)
        h = (self.lambda_max_um - self.lambda_min_um) / n
        w = np.full(n + 1, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return lam, w * (h / 3.0)


def band_exitance(temp_k, band: BandModel = None):
    """Black-body exitance integrated over the band (W * m^-2)."""
    band = band if band is not None else BandModel()
    lam, w = band.nodes_weights()
    temp = np.atleast_1d(np.asarray(temp_k, dtype=np.float64))
    spectral = planck_spectral_exitance(lam[None, :], temp[:, None])
    out = spectral @ w
    return float(out[0]) if np.isscalar(temp_k) or np.ndim(temp_k) == 0 else out


def pixel_response(emissivity, t_obj_k, t_amb_k, band: BandModel = None):
    """In-band radiance seen by the sensor for one surface.

    Emitted part scales with emissivity, the remainder reflects the ambient
    surroundings: eps * I(T_obj) + (1 - eps) * I(T_amb), both band-integrated.
    """
    band = band if band is not None else BandModel()
    eps = np.asarray(emissivity, dtype=np.float64)
    if np.any(eps < 0.0) or np.any(eps > 1.0):
        raise ContractViolation("emissivity must lie in [0, 1]")
    if np.any(np.asarray(t_obj_k) <= 0) or np.any(np.asarray(t_amb_k) <= 0):
        raise ContractViolation("temperatures must be positive")
    return eps * band_exitance(t_obj_k, band) + (1.0 - eps) * band_exitance(t_amb_k, band)


def _simulate_many(history_k: np.ndarray, tau_hours: np.ndarray,
                   internal_heat: np.ndarray, sun_exposure: np.ndarray,
                   steps_per_hour: int = 4, sun_gain_k: float = SUN_GAIN_K) -> np.ndarray:
    """Vectorized thermal relaxation for several materials at once.

    dT/dt = (T_amb(t) + sun_gain * sun_exposure - T) / tau, ambient piecewise
    linear between hourly samples (held constant over the final hour). Each
    sub-step applies the exact solution for a linear-in-time target, so the
    integrator is stable for arbitrarily small tau.
    """
    hist = np.asarray(history_k, dtype=np.float64)
    if hist.shape != (HISTORY_HOURS,) or not np.all(np.isfinite(hist)):
        raise DataError(f"history must be {HISTORY_HOURS} finite hourly values")
    tau = np.asarray(tau_hours, dtype=np.float64)
    if np.any(tau <= 0.0):
        raise ContractViolation("thermal time constant must be positive")
    gain = sun_gain_k * np.asarray(sun_exposure, dtype=np.float64)
    h = 1.0 / steps_per_hour
    decay = np.exp(-h / tau)
    ramp = tau * np.expm1(-h / tau)
    temp = np.broadcast_to(hist[0], tau.shape).astype(np.float64).copy()
    for hour in range(HISTORY_HOURS):
        a0 = hist[hour]
        a1 = hist[hour + 1] if hour + 1 < HISTORY_HOURS else hist[hour]
        slope = a1 - a0
        for k in range(steps_per_hour):
            target = a0 + slope * (k * h) + gain
            temp = target + slope * h + slope * ramp + decay * (temp - target)
    return temp + np.asarray(internal_heat, dtype=np.float64)


def simulate_object_temperature(history_k, tau_hours: float, internal_heat: float = 0.0,
                                sun_exposure: float = 0.0, steps_per_hour: int = 4,
                                sun_gain_k: float = SUN_GAIN_K) -> float:
    """Object temperature after 72 h of relaxation toward the ambient history.

    Starts at the oldest recorded ambient value; sun exposure raises the
    relaxation target by sun_gain_k * sun_exposure; internal_heat is added to
    the final temperature (hidden state invisible in the reflectance channel).
    """
    require(steps_per_hour >= 4, "need at least 4 integration steps per hour")
    out = _simulate_many(history_k, np.atleast_1d(float(tau_hours)),
                         np.atleast_1d(float(internal_heat)),
                         np.atleast_1d(float(sun_exposure)),
                         steps_per_hour, sun_gain_k)
    return float(out[0])


@dataclass(frozen=True)
class Material:
    """Surface properties that drive both the gray and thermal appearance."""

    name: str
    emissivity: float
    albedo: float
    tau_hours: float
    sun_exposure: float = 0.0
    internal_heat: float = 0.0

    def __post_init__(self):
        require(0.0 <= self.emissivity <= 1.0, "emissivity must be in [0, 1]")
        require(0.0 <= self.albedo <= 1.0, "albedo must be in [0, 1]")
        require(self.tau_hours > 0.0, "tau must be positive")
        require(0.0 <= self.sun_exposure <= 1.0, "sun_exposure must be in [0, 1]")
        require(self.internal_heat >= 0.0, "internal_heat must be nonnegative")

    def heated(self, extra_kelvin: float) -> "Material":
        return Material(self.name, self.emissivity, self.albedo, self.tau_hours,
                        self.sun_exposure, self.internal_heat + extra_kelvin)


# Palette of flat-card surface types. Albedo runs roughly opposite to how hot
# the material tends to get (dark asphalt bakes, bright metal stays near
# ambient and reflects), so gray brightness is a poor direct proxy for
# thermal brightness.
MATERIAL_PALETTE = {
    "polished-metal": Material("polished-metal", 0.25, 0.88, 2.0, 0.65),
    "brushed-metal": Material("brushed-metal", 0.40, 0.70, 8.0, 0.65),
    "painted-panel": Material("painted-panel", 0.92, 0.92, 0.6, 0.35),
    "plastic": Material("plastic", 0.94, 0.78, 3.0, 0.20),
    "wood": Material("wood", 0.90, 0.50, 6.0, 0.45),
    "brick": Material("brick", 0.93, 0.42, 20.0, 0.70),
    "concrete": Material("concrete", 0.91, 0.65, 40.0, 0.35),
    "soil": Material("soil", 0.92, 0.35, 26.0, 0.55),
    "foliage": Material("foliage", 0.95, 0.28, 1.5, 0.85),
    "water": Material("water", 0.96, 0.15, 48.0, 0.30),
    "asphalt": Material("asphalt", 0.95, 0.08, 12.0, 0.90),
}

CATEGORY_MATERIALS = {
    "objects": ("polished-metal", "brushed-metal", "painted-panel", "plastic", "wood"),
    "buildings": ("brick", "concrete", "asphalt", "painted-panel", "brushed-metal"),
    "nature": ("foliage", "water", "wood", "soil", "asphalt"),
}


@dataclass(frozen=True)
class Region:
    kind: str          # "rect" or "tri"
    params: tuple      # rect: (y0, x0, y1, x1) half-open; tri: 3 (y, x) vertices
    material_index: int

    def __post_init__(self):
        require(self.kind in ("rect", "tri"), f"unknown region kind {self.kind!r}")


@dataclass(frozen=True)
class Scene:
    """Flat multi-material card: a label map plus per-label materials."""

    labels: np.ndarray            # (H, W) int indices into materials
    materials: tuple              # Material per label
    regions: tuple                # Region list used to paint the labels
    ambient_now_k: float
    illum_theta: float            # gray-channel shading direction, radians
    illum_strength: float         # gray-channel shading amplitude in [0, 1)
    seed: int
    scene_id: str
    category: str
    timestamp: str

    def __post_init__(self):
        lab = np.asarray(self.labels)
        require(lab.ndim == 2 and np.issubdtype(lab.dtype, np.integer),
                "labels must be a 2D integer map")
        require(len(self.materials) >= 1, "scene needs at least one material")
        require(int(lab.min()) >= 0 and int(lab.max()) < len(self.materials),
                "every pixel must reference a listed material")
        require(len(self.regions) >= 3, "scene needs at least 3 regions")
        require(180.0 <= self.ambient_now_k <= 340.0, "ambient temperature out of range")
        require(0.0 <= self.illum_strength < 1.0, "illumination strength must be in [0, 1)")
        require(self.category in CATEGORIES, f"unknown category {self.category!r}")
        lab = lab.copy()
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)


@dataclass(frozen=True)
class NoiseParams:
    """Thermal-channel degradation: optics blur plus sensor noise.

    netd_kelvin is the noise-equivalent temperature difference; it is turned
    into radiometric units via the band responsivity at the scene's ambient
    temperature, so the same setting means the same visible noise level
    across scenes.
    """

    netd_kelvin: float = 0.05
    blur_sigma: float = 0.7

    def __post_init__(self):
        require(self.netd_kelvin >= 0.0 and self.blur_sigma >= 0.0,
                "noise parameters must be nonnegative")


def _shading_field(shape, theta: float, strength: float) -> np.ndarray:
    h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1.0, 1.0, h), np.linspace(-1.0, 1.0, w),
                         indexing="ij")
    ramp = xx * math.cos(theta) + yy * math.sin(theta)
    peak = max(np.max(np.abs(ramp)), 1e-12)
    return 1.0 + strength * (ramp / peak)


def render_pair(scene: Scene, history_k, noise: NoiseParams = None,
                band: BandModel = None) -> ModalPair:
    """Render the aligned gray/thermal pair for one scene and one history.

    Thermal: per-material relaxed temperature -> in-band radiance map ->
    Gaussian blur -> additive sensor noise -> mean normalization. Gray:
    albedo map under a linear shading ramp -> mean normalization. Geometry is
    pixel-identical across the two channels by construction. Outputs are
    quantized through float32 so that a round-trip through the on-disk format
    is bit-exact.
    """
    noise = noise if noise is not None else NoiseParams()
    band = band if band is not None else BandModel()
    mats = scene.materials
    tau = np.array([m.tau_hours for m in mats])
    heat = np.array([m.internal_heat for m in mats])
    sun = np.array([m.sun_exposure for m in mats])
    eps = np.array([m.emissivity for m in mats])
    albedo = np.array([m.albedo for m in mats])

    t_obj = _simulate_many(history_k, tau, heat, sun)
    radiance = pixel_response(eps, t_obj, scene.ambient_now_k, band)
    thermal = radiance[scene.labels]
    if noise.blur_sigma > 0.0:
        thermal = gaussian_filter(thermal, noise.blur_sigma, mode="nearest")
    rng = np.random.default_rng(scene.seed)
    if noise.netd_kelvin > 0.0:
        responsivity = band_exitance(scene.ambient_now_k + 0.5, band) \
            - band_exitance(scene.ambient_now_k - 0.5, band)
        thermal = thermal + rng.normal(0.0, noise.netd_kelvin * responsivity,
                                       thermal.shape)
    thermal = mean_normalize_array(thermal)

    gray = albedo[scene.labels] * _shading_field(scene.labels.shape,
                                                 scene.illum_theta,
                                                 scene.illum_strength)
    gray = mean_normalize_array(gray)

    thermal = thermal.astype(np.float32).astype(np.float64)
    gray = gray.astype(np.float32).astype(np.float64)
    return ModalPair(rgb_gray=Image(gray), thermal=Image(thermal),
                     timestamp=scene.timestamp, category=scene.category,
                     scene_id=scene.scene_id)


@dataclass(frozen=True)
class SceneGenConfig:
    """Knobs for the random scene generator (all draws seeded)."""

    regions_min: int = 3
    regions_max: int = 6
    hidden_heat_prob: float = 0.08
    hidden_heat_min_k: float = 4.0
    hidden_heat_max_k: float = 10.0
    illum_strength_min: float = 0.2
    illum_strength_max: float = 0.6
    min_visible_fraction: float = 0.02

    def __post_init__(self):
        require(3 <= self.regions_min <= self.regions_max, "need at least 3 regions")
        require(0.0 <= self.hidden_heat_prob <= 1.0, "probability must be in [0, 1]")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "SceneGenConfig":
        known = {k: v for k, v in d.items() if k in SceneGenConfig.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise DataError(f"unknown scene generator fields: {sorted(unknown)}")
        return SceneGenConfig(**known)


def _paint_regions(shape, regions) -> np.ndarray:
    h, w = shape
    labels = np.zeros((h, w), dtype=np.int32)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) + 0.5,
                         np.arange(w, dtype=np.float64) + 0.5, indexing="ij")
    for region in regions:
        if region.kind == "rect":
            y0, x0, y1, x1 = region.params
            mask = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        else:
            (ay, ax), (by, bx), (cy, cx) = region.params
            # consistent half-plane tests; sign chosen by the triangle's own area
            area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if abs(area) < 1e-9:
                continue
            s = np.sign(area)
            d0 = ((bx - ax) * (yy - ay) - (by - ay) * (xx - ax)) * s
            d1 = ((cx - bx) * (yy - by) - (cy - by) * (xx - bx)) * s
            d2 = ((ax - cx) * (yy - cy) - (ay - cy) * (xx - cx)) * s
            mask = (d0 >= 0) & (d1 >= 0) & (d2 >= 0)
        labels[mask] = region.material_index
    return labels


def _signature(mat: Material) -> tuple:
    return (mat.name, mat.internal_heat)


def generate_scene(config: SceneGenConfig, shape, scene_id: str, category: str,
                   timestamp: str, ambient_now_k: float, seed: int) -> Scene:
    """Draw one random flat-card scene for the given category."""
    require(category in CATEGORY_MATERIALS, f"unknown category {category!r}")
    h, w = shape
    rng = np.random.default_rng(seed)
    pool = CATEGORY_MATERIALS[category]
    for _attempt in range(32):
        n_regions = int(rng.integers(config.regions_min, config.regions_max + 1))
        names = [str(rng.choice(pool)) for _ in range(n_regions + 1)]
        materials = []
        for i, name in enumerate(names):
            mat = MATERIAL_PALETTE[name]
            if i > 0 and rng.random() < config.hidden_heat_prob:
                mat = mat.heated(float(rng.uniform(config.hidden_heat_min_k,
                                                   config.hidden_heat_max_k)))
            materials.append(mat)
        regions = []
        for i in range(n_regions):
            if rng.random() < 0.6:
                rh = int(rng.integers(max(4, h // 6), max(5, h // 2)))
                rw = int(rng.integers(max(4, w // 6), max(5, w // 2)))
                y0 = int(rng.integers(0, h - rh + 1))
                x0 = int(rng.integers(0, w - rw + 1))
                regions.append(Region("rect", (y0, x0, y0 + rh, x0 + rw), i + 1))
            else:
                cy = rng.uniform(0.15 * h, 0.85 * h)
                cx = rng.uniform(0.15 * w, 0.85 * w)
                verts = []
                for _ in range(3):
                    ang = rng.uniform(0.0, 2.0 * math.pi)
                    rad = rng.uniform(0.12, 0.38) * min(h, w)
                    verts.append((cy + rad * math.sin(ang), cx + rad * math.cos(ang)))
                regions.append(Region("tri", tuple(verts), i + 1))
        labels = _paint_regions((h, w), regions)
        # keep scenes informative: several distinct surfaces, none vanishingly small
        visible = np.bincount(labels.ravel(), minlength=len(materials)) / (h * w)
        sig_fractions = {}
        for idx, frac in enumerate(visible):
            if frac > 0:
                sig = _signature(materials[idx])
                sig_fractions[sig] = sig_fractions.get(sig, 0.0) + frac
        enough = len(sig_fractions) >= 3 and min(sig_fractions.values()) >= config.min_visible_fraction
        if not enough:
            continue
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        strength = float(rng.uniform(config.illum_strength_min, config.illum_strength_max))
        return Scene(labels=labels, materials=tuple(materials), regions=tuple(regions),
                     ambient_now_k=float(ambient_now_k), illum_theta=theta,
                     illum_strength=strength, seed=seed, scene_id=scene_id,
                     category=category, timestamp=timestamp)
    raise DataError(f"could not draw a valid scene for {scene_id!r} after 32 attempts")
