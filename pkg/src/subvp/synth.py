"""Synthetic viewers with and without subtitle guidance.

Every simulated viewer wanders: isotropic angular noise plus a slowly varying
drift and a weak pull back toward the horizon, all scaled by the noise level.
Scenes may also carry points of interest; each viewer drifts toward one of
them at a time and now and then switches to another. Guided viewers additionally read the subtitles: after a per-user reaction
delay, while a cue is active, their heading is pulled along the great circle
toward the cue target by ``1 - exp(-kappa * dt)`` per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .errors import ValidationError
from .subtitles import NavigationLexicon, SubtitleCue, SubtitleTrack, normalize_phrase
from .trajectory import Trajectory

HALF_PI = math.pi / 2

# Scene-relative direction of each default phrase as (azimuth, inclination).
# Azimuth grows toward the viewer's left, 0 is the scene front; vertical
# phrases point above or below the front.
DIRECTIONS = {
    "on the left": (HALF_PI, HALF_PI),
    "on your left": (HALF_PI, HALF_PI),
    "to the left": (HALF_PI, HALF_PI),
    "from the left": (HALF_PI, HALF_PI),
    "on the right": (3 * HALF_PI, HALF_PI),
    "on your right": (3 * HALF_PI, HALF_PI),
    "to the right": (3 * HALF_PI, HALF_PI),
    "from the right": (3 * HALF_PI, HALF_PI),
    "in front of": (0.0, HALF_PI),
    "straight ahead": (0.0, HALF_PI),
    "behind you": (math.pi, HALF_PI),
    "turn around": (math.pi, HALF_PI),
    "look back": (math.pi, HALF_PI),
    "on top of": (0.0, HALF_PI - 0.6),
    "above": (0.0, HALF_PI - 0.6),
    "look up": (0.0, HALF_PI - 0.6),
    "up there": (0.0, HALF_PI - 0.6),
    "below": (0.0, HALF_PI + 0.5),
    "look down": (0.0, HALF_PI + 0.5),
    "beneath": (0.0, HALF_PI + 0.5),
}

LANDMARKS = [
    "cathedral", "old bridge", "market hall", "clock tower", "harbour", "palace gate",
    "fountain", "city wall", "lighthouse", "opera house", "stone arch", "garden",
]


@dataclass(frozen=True)
class ScriptCue:
    start: float
    end: float
    phrase: str
    target: geometry.SphericalCoord
    text: str = ""


@dataclass(frozen=True)
class ScenarioScript:
    duration: float = 120.0
    dt: float = 0.5
    cues: tuple = ()
    attractor_strength: float = 1.5
    noise_level: float = 0.15
    seed: int = 0
    video_id: str = "v1"
    drift_time: float = 4.0
    drift_ratio: float = 0.5
    horizon_pull: float = 0.1
    reaction_delay: tuple = (0.5, 1.5)
    hotspots: tuple = ()
    interest_rate: float = 0.4
    dwell_time: float = 8.0

    def __post_init__(self):
        if not (self.duration > 0 and self.dt > 0):
            raise ValidationError("duration and dt must be positive")
        if self.attractor_strength < 0 or self.noise_level < 0:
            raise ValidationError("attractor strength and noise level must be >= 0")
        lo, hi = self.reaction_delay
        if not 0 <= lo <= hi:
            raise ValidationError("reaction delay must be an ordered non-negative range")
        if self.interest_rate < 0 or not self.dwell_time > 0:
            raise ValidationError("interest rate must be >= 0 and dwell time > 0")
        for cue in self.cues:
            if not (0 <= cue.start < cue.end <= self.duration):
                raise ValidationError(f"cue [{cue.start}, {cue.end}) outside [0, {self.duration})")

    @property
    def steps(self):
        return int(math.floor(self.duration / self.dt + 1e-9))

    @property
    def coverage(self):
        return sum(c.end - c.start for c in self.cues) / self.duration


@dataclass(frozen=True)
class CohortSpec:
    n_guided: int = 9
    n_unguided: int = 9
    script: ScenarioScript = field(default_factory=ScenarioScript)

    def __post_init__(self):
        if self.n_guided < 0 or self.n_unguided < 0 or self.n_guided + self.n_unguided == 0:
            raise ValidationError("cohort needs non-negative group sizes, at least one user")


@dataclass(eq=False)
class Cohort:
    script: ScenarioScript
    trajectories: list
    subtitled: dict
    track: SubtitleTrack
    lexicon: NavigationLexicon


def _tangent_step(h, v):
    """Move unit vector ``h`` along tangent vector ``v`` (exponential map)."""
    a = np.linalg.norm(v)
    if a < 1e-15:
        return h
    out = math.cos(a) * h + math.sin(a) * (v / a)
    return out / np.linalg.norm(out)


def _tangent_noise(rng, h, scale):
    g = rng.normal(0.0, scale, 3)
    return g - np.dot(g, h) * h


def generate_user(script: ScenarioScript, guided: bool, seed, user_id: str = "user") -> Trajectory:
    """Simulate one viewer on the script's ``dt`` grid."""
    rng = np.random.default_rng(seed)
    dt, eta = script.dt, script.noise_level
    steps = script.steps
    phi0 = rng.normal(0.0, 0.6)
    theta0 = HALF_PI + rng.normal(0.0, 0.15)
    h = geometry.angles_to_units(phi0, theta0)
    delay = rng.uniform(*script.reaction_delay)
    pull = 1.0 - math.exp(-script.attractor_strength * dt)
    horizon = 1.0 - math.exp(-script.horizon_pull * dt)
    keep = math.exp(-dt / script.drift_time)
    # per-axis scales so the 2-D tangent displacement has the stated RMS
    step_sd = eta * math.sqrt(dt / 2.0)
    drift_sd = script.drift_ratio * eta / math.sqrt(2.0)
    drift = _tangent_noise(rng, h, drift_sd)
    targets = [geometry.angles_to_units(c.target.azimuth, c.target.inclination) for c in script.cues]
    spots = [geometry.angles_to_units(p.azimuth, p.inclination) for p in script.hotspots]
    interest = 1.0 - math.exp(-script.interest_rate * dt)
    switch = 1.0 - math.exp(-dt / script.dwell_time)
    focus = int(rng.integers(len(spots))) if spots else -1
    out = np.empty((steps, 3))
    for k in range(steps):
        out[k] = h
        t = k * dt
        # state at step k+1
        drift = drift - np.dot(drift, h) * h
        drift = keep * drift + math.sqrt(1 - keep * keep) * _tangent_noise(rng, h, drift_sd)
        noise = _tangent_noise(rng, h, step_sd)
        h = _tangent_step(h, drift * dt + noise)
        flat = np.array([h[0], 0.0, h[2]])
        if horizon > 0 and eta > 0 and np.linalg.norm(flat) > 1e-9:
            h = geometry.slerp_units(h, flat / np.linalg.norm(flat), horizon)[0]
        following = False
        if guided and pull > 0:
            for cue, target in zip(script.cues, targets):
                if cue.start + delay <= t + dt and t + dt < cue.end:
                    h = geometry.slerp_units(h, target, pull)[0]
                    following = True
                    break
        if spots:
            if rng.random() < switch:
                focus = int(rng.integers(len(spots)))
            if not following and interest > 0:
                h = geometry.slerp_units(h, spots[focus], interest)[0]
    phi, theta = geometry.units_to_angles(out)
    return Trajectory(user_id, script.video_id, np.arange(steps) * dt, phi, theta)


def _cue_text(rng, phrase):
    landmark = LANDMARKS[int(rng.integers(len(LANDMARKS)))]
    if phrase == "in front of":
        return f"The {landmark} stands in front of the square."
    templates = [
        "{P}, you can see the {L}.",
        "The {L} is {p}.",
        "Now {p}: the famous {L}.",
    ]
    t = templates[int(rng.integers(len(templates)))]
    return t.format(P=phrase[0].upper() + phrase[1:], p=phrase, L=landmark)


def random_script(seed, duration=120.0, dt=0.5, video_id="v1", lexicon=None, **params) -> ScenarioScript:
    """Scenario with cues of 3-6 s separated by 1-3 s gaps (about 70% coverage)."""
    lexicon = lexicon or NavigationLexicon.default()
    rng = np.random.default_rng(seed)
    n_spots = int(params.pop("n_hotspots", 3))
    hotspots = tuple(
        geometry.SphericalCoord(rng.uniform(0, 2 * math.pi), HALF_PI + rng.normal(0.0, 0.2))
        for _ in range(n_spots))
    phrases = [p for p in lexicon.phrases if p in DIRECTIONS]
    if not phrases:
        raise ValidationError("lexicon has no phrase with a known direction")
    cues = []
    t = round(float(rng.uniform(1.0, 3.0)), 1)
    while True:
        length = round(float(rng.uniform(3.0, 6.0)), 1)
        if t + length > duration:
            break
        phrase = phrases[int(rng.integers(len(phrases)))]
        az, inc = DIRECTIONS[phrase]
        az = az + rng.normal(0.0, 0.25)
        inc = float(np.clip(inc + rng.normal(0.0, 0.1), 0.2, math.pi - 0.2))
        cues.append(ScriptCue(t, t + length, phrase, geometry.SphericalCoord(az, inc), _cue_text(rng, phrase)))
        t = round(t + length + float(rng.uniform(1.0, 3.0)), 1)
    return ScenarioScript(duration=duration, dt=dt, cues=tuple(cues), seed=int(seed), video_id=video_id,
                          hotspots=hotspots, **params)


def script_track(script: ScenarioScript) -> SubtitleTrack:
    cues = []
    for i, c in enumerate(script.cues, 1):
        text = c.text or c.phrase[0].upper() + c.phrase[1:]
        cues.append(SubtitleCue(i, round(c.start, 3), round(c.end, 3), text))
    return SubtitleTrack(tuple(cues))


def generate_cohort(spec: CohortSpec, lexicon=None) -> Cohort:
    """Guided and unguided viewers of one scripted video, seeded from the script."""
    lexicon = lexicon or NavigationLexicon.default()
    for cue in spec.script.cues:
        if normalize_phrase(cue.phrase) not in lexicon.entries:
            raise ValidationError(f"cue phrase {cue.phrase!r} is not in the lexicon")
    seeds = np.random.SeedSequence([spec.script.seed, 7]).spawn(spec.n_guided + spec.n_unguided)
    trajs, subtitled = [], {}
    for k, ss in enumerate(seeds):
        guided = k < spec.n_guided
        uid = f"g{k + 1:02d}" if guided else f"u{k - spec.n_guided + 1:02d}"
        trajs.append(generate_user(spec.script, guided, ss, uid))
        subtitled[uid] = guided
    return Cohort(spec.script, trajs, subtitled, script_track(spec.script), lexicon)


def generate_videos(n_videos, seed, duration=120.0, n_guided=9, n_unguided=9, lexicon=None, **params):
    """Independent cohorts on ``n_videos`` random scripts, video ids ``v1..vK``."""
    lexicon = lexicon or NavigationLexicon.default()
    seeds = np.random.SeedSequence([int(seed), 11]).generate_state(n_videos)
    out = []
    for k, s in enumerate(seeds, 1):
        script = random_script(int(s), duration=duration, video_id=f"v{k}", lexicon=lexicon, **params)
        out.append(generate_cohort(CohortSpec(n_guided, n_unguided, script), lexicon))
    return out


def cue_mask(script: ScenarioScript):
    """Boolean per step: a cue is active at ``k * dt``."""
    t = np.arange(script.steps) * script.dt
    mask = np.zeros(script.steps, dtype=bool)
    for c in script.cues:
        mask |= (t >= c.start) & (t < c.end)
    return mask


def dispersion(trajectories, mask=None):
    """Mean pairwise orthodromic distance across users, averaged over masked steps."""
    phi = np.stack([tr.phi for tr in trajectories])
    theta = np.stack([tr.theta for tr in trajectories])
    if mask is not None:
        phi, theta = phi[:, mask], theta[:, mask]
    n = len(trajectories)
    if n < 2 or phi.shape[1] == 0:
        raise ValidationError("dispersion needs two users and at least one step")
    i, j = np.triu_indices(n, 1)
    d = geometry.spherical_distance(phi[i], theta[i], phi[j], theta[j])
    return float(d.mean())


def with_params(script: ScenarioScript, **changes) -> ScenarioScript:
    return replace(script, **changes)
