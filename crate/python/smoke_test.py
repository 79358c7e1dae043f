"""Smoke test for the vispgan_py extension module.

Build and install first:
    pip install --no-build-isolation -e crates/py
then run:
    python python/smoke_test.py
"""

import math
import os
import tempfile

import vispgan_py as vp


def check_labels():
    labels = vp.expand_characters("around", 24)
    assert len(labels) == 24
    runs = []
    for x in labels:
        if runs and runs[-1][0] == x:
            runs[-1][1] += 1
        else:
            runs.append([x, 1])
    assert [r[1] for r in runs] == [4] * 6, runs
    assert vp.run_lengths(3, 8) == [3, 3, 2]


def check_clip_io(tmp):
    data = [math.sin(i * 0.1) * 0.9 for i in range(4 * 4 * 4 * 3)]
    clip = vp.Clip(4, 4, 4, 3, data)
    assert clip.dims == (4, 4, 4, 3)
    path = os.path.join(tmp, "c.vsgc")
    clip.write(path)
    back = vp.Clip.read(path)
    assert back.data() == clip.data()
    dims, vol = vp.conditioning_volume(clip, "ab")
    assert dims == (4, 4, 4, 3 + 26)
    # first pixel: the clip's channels, then 'a' hot in frame 0
    assert vol[:3] == clip.data()[:3]
    assert vol[3:5] == [1.0, 0.0]
    try:
        vp.Clip(1, 1, 1, 1, [2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range clip accepted")
    return clip


def check_fid():
    a = [[0.0], [2.0], [1.0], [3.0]]
    assert abs(vp.fid(a, a)) < 1e-8
    b = [[x[0] + 2.0] for x in a]
    assert abs(vp.fid(a, b) - 4.0) < 1e-8


def check_blend(clip):
    same = vp.blend(clip, clip, {0: (0, 0, 4, 4)})
    assert max(abs(x - y) for x, y in zip(same.data(), clip.data())) < 1e-5
    flat = vp.Clip(4, 4, 4, 3, [0.0] * (4 * 4 * 4 * 3))
    out = vp.blend(clip, flat, {1: (0, 0, 4, 4)})
    assert out.frame(0) == clip.frame(0)


def check_corpus(tmp):
    n = vp.make_desk_corpus(os.path.join(tmp, "corpus"), seed=1)
    assert n == 10 * (40 + 10 + 10), n


def main():
    with tempfile.TemporaryDirectory() as tmp:
        check_labels()
        clip = check_clip_io(tmp)
        check_fid()
        check_blend(clip)
        check_corpus(tmp)
    print("python smoke test passed")


if __name__ == "__main__":
    main()
