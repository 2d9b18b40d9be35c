"""Per-timestep model inputs for a collection of videos.

A :class:`FeatureSet` holds, per video, the aggregate saliency map of every
timestep and, per (user, video), the viewport centers, subtitle indicator and
navigation token sequence on the same ``dt`` grid.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import saliency, subtitles
from .errors import ValidationError
from .predictor import WindowSet, encode_angles
from .trajectory import resample, window_offsets


@dataclass(eq=False)
class UserSeries:
    user_id: str
    video_id: str
    phi: np.ndarray
    theta: np.ndarray
    indicator: np.ndarray
    seq_ids: np.ndarray


@dataclass(eq=False)
class FeatureSet:
    dt: float
    sigma: float
    vocab_size: int
    maps: dict                      # video_id -> (T, H, W) float32
    users: list                     # UserSeries
    sequences: list = field(default_factory=lambda: [()])

    @property
    def videos(self):
        return sorted(self.maps)

    def series(self, video_id):
        return [u for u in self.users if u.video_id == video_id]

    def windows(self, videos=None, m=5, n=5, stride=1) -> WindowSet:
        """All ``(m, n)`` windows of the given videos, one group per video."""
        videos = self.videos if videos is None else list(videos)
        missing = set(videos) - set(self.maps)
        if missing:
            raise ValidationError(f"unknown videos {sorted(missing)}")
        bank, offsets = [], {}
        base = 0
        for v in videos:
            offsets[v] = base
            bank.append(self.maps[v])
            base += len(self.maps[v])
        cols = {k: [] for k in ("map_ids", "seq_ids", "indicator", "history", "target", "angles", "group",
                                "video", "user", "start")}
        for g, v in enumerate(videos):
            for u in self.series(v):
                starts = window_offsets(len(u.phi), m, n, stride)
                if not len(starts):
                    continue
                inp = starts[:, None] + np.arange(m)
                out = starts[:, None] + m + np.arange(n)
                enc = encode_angles(u.phi, u.theta)
                cols["map_ids"].append(offsets[v] + inp)
                cols["seq_ids"].append(u.seq_ids[inp])
                cols["indicator"].append(u.indicator[inp])
                cols["history"].append(enc[inp])
                cols["target"].append(enc[out])
                cols["angles"].append(np.stack([u.phi[out], u.theta[out]], axis=-1))
                cols["group"].append(np.full(len(starts), g))
                cols["video"].append(np.full(len(starts), v, dtype=object))
                cols["user"].append(np.full(len(starts), u.user_id, dtype=object))
                cols["start"].append(starts)
        if not cols["map_ids"]:
            raise ValidationError(f"no window of length {m + n} fits the selected videos")
        cat = {k: np.concatenate(vs) for k, vs in cols.items()}
        maps = np.concatenate(bank) if bank else np.zeros((0, 1, 1), np.float32)
        return WindowSet(
            maps, self.sequences, cat["map_ids"], cat["seq_ids"],
            cat["indicator"].astype(np.float32), cat["history"].astype(np.float32),
            cat["target"].astype(np.float32), cat["angles"], cat["group"],
            {"video": cat["video"], "user": cat["user"], "start": cat["start"]},
        )

    # -- persistence (npz)
    def save(self, path):
        arrays = {}
        meta = {"dt": self.dt, "sigma": self.sigma, "vocab_size": self.vocab_size,
                "videos": self.videos, "users": [], "sequences": [list(s) for s in self.sequences]}
        for v in self.videos:
            arrays[f"map/{v}"] = self.maps[v]
        for i, u in enumerate(self.users):
            meta["users"].append([u.user_id, u.video_id])
            arrays[f"u{i}/phi"] = u.phi
            arrays[f"u{i}/theta"] = u.theta
            arrays[f"u{i}/indicator"] = u.indicator
            arrays[f"u{i}/seq"] = u.seq_ids
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(z["meta"].tobytes().decode("utf-8"))
            maps = {v: z[f"map/{v}"] for v in meta["videos"]}
            users = [UserSeries(uid, vid, z[f"u{i}/phi"], z[f"u{i}/theta"], z[f"u{i}/indicator"], z[f"u{i}/seq"])
                     for i, (uid, vid) in enumerate(meta["users"])]
        return cls(meta["dt"], meta["sigma"], meta["vocab_size"], maps, users,
                   [tuple(s) for s in meta["sequences"]])


def build_features(trajectories, tracks, lexicon, subtitled=None, dt=0.5, sal_cfg=None) -> FeatureSet:
    """Featurize trajectories.

    ``tracks`` maps video id to its SubtitleTrack (missing videos have no
    subtitles); ``subtitled`` maps user id to whether that user saw subtitles
    (default: everyone did). Trajectories already on the ``dt`` grid from
    ``t = 0`` are used as is, others are resampled. Each video is cut to the
    shortest of its users so every map averages the same viewers.
    """
    sal_cfg = sal_cfg or saliency.SaliencyConfig()
    subtitled = subtitled or {}
    by_video = {}
    for tr in trajectories:
        if len(tr) > 1 and not np.allclose(np.diff(tr.t), dt, rtol=0, atol=1e-9):
            tr = resample(tr, dt)
        by_video.setdefault(tr.video_id, []).append(tr)

    sequences = [()]
    seq_index = {(): 0}
    maps, users = {}, []
    for v in sorted(by_video):
        trs = by_video[v]
        T = min(len(tr) for tr in trs)
        phi = np.stack([tr.phi[:T] for tr in trs], axis=1)
        theta = np.stack([tr.theta[:T] for tr in trs], axis=1)
        maps[v] = saliency.saliency_frames(phi, theta, sal_cfg).astype(np.float32)
        track = tracks.get(v, subtitles.SubtitleTrack())
        frames = subtitles.timeline(track, lexicon, dt, T * dt)
        ind = np.array([f.indicator for f in frames], dtype=np.float32)
        seq = np.empty(T, dtype=np.int64)
        for k, f in enumerate(frames):
            seq[k] = seq_index.setdefault(f.nav_tokens, len(seq_index))
            if seq[k] == len(sequences):
                sequences.append(f.nav_tokens)
        for tr in trs:
            if subtitled.get((tr.user_id, tr.video_id), True):
                users.append(UserSeries(tr.user_id, v, tr.phi[:T], tr.theta[:T], ind, seq))
            else:
                users.append(UserSeries(tr.user_id, v, tr.phi[:T], tr.theta[:T],
                                        np.zeros(T, np.float32), np.zeros(T, np.int64)))
    return FeatureSet(dt, sal_cfg.sigma, len(lexicon), maps, users, sequences)


def read_viewers(path):
    """``(user_id, video_id) -> subtitled`` from a ``user_id,video_id,subtitled`` CSV."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[(row["user_id"], row["video_id"])] = row["subtitled"].strip() in ("1", "true", "True", "yes")
    return out


def write_viewers(path, cohorts):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "video_id", "subtitled"])
        for c in cohorts:
            for tr in c.trajectories:
                w.writerow([tr.user_id, tr.video_id, int(c.subtitled[tr.user_id])])


def from_cohorts(cohorts, dt=0.5, sal_cfg=None) -> FeatureSet:
    trajs, tracks, subtitled = [], {}, {}
    lexicon = cohorts[0].lexicon
    for c in cohorts:
        trajs.extend(c.trajectories)
        tracks[c.script.video_id] = c.track
        subtitled.update({(u, c.script.video_id): g for u, g in c.subtitled.items()})
    return build_features(trajs, tracks, lexicon, subtitled, dt, sal_cfg)
