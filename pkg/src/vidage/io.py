"""16-bit PGM frames and video directories (numbered PGM frames + ``index.json``)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["write_pgm", "read_pgm", "VideoSequence", "write_video", "read_video", "write_json"]

MAXVAL = 65535


def write_pgm(path, frame) -> None:
    """Binary (P5) 16-bit graymap; values in [0, 1] are scaled to 0..65535."""
    x = np.asarray(frame, dtype=np.float64)
    q = np.rint(np.clip(x, 0.0, 1.0) * MAXVAL).astype(">u2")
    h, w = x.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        fh.write(q.tobytes())


def _tokens(data: bytes, count: int):
    out, pos = [], 0
    while len(out) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        out.append(data[start:pos])
    return out, pos + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(data, 4)
    if magic != b"P5":
        raise ValueError(f"{path}: only binary PGM (P5) is supported")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    q = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    return q.reshape(h, w).astype(np.float64) / maxval


@dataclass
class VideoSequence:
    frames: list
    attributes: str | None = None
    name: str = "video"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple:
        return np.asarray(self.frames[0]).shape


def write_video(directory, video: VideoSequence) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for t, frame in enumerate(video.frames):
        name = f"frame_{t:04d}.pgm"
        write_pgm(d / name, frame)
        names.append(name)
    h, w = video.shape
    index = {"name": video.name, "frames": names, "height": h, "width": w,
             "attributes": video.attributes, "meta": video.meta}
    write_json(d / "index.json", index)
    return d


def read_video(directory) -> VideoSequence:
    d = Path(directory)
    index = json.loads((d / "index.json").read_text())
    frames = [read_pgm(d / name) for name in index["frames"]]
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise ValueError(f"{d}: frames have differing shapes {shapes}")
    return VideoSequence(frames, index.get("attributes"), index.get("name", d.name),
                         index.get("meta", {}))


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
