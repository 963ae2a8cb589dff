"""Builds the extension module and exercises it end to end.

    python3 python/smoke_test.py
"""

import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]
CORPUS = ROOT / "crates" / "core" / "assets" / "corpus"
IMAGENET = ROOT / "crates" / "core" / "assets" / "requirements" / "imagenet.json"


def build(dest):
    subprocess.run(
        ["cargo", "build", "--release", "-p", "visreq-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    shutil.copy(ROOT / "target" / "release" / "libvisreq_py.so", dest / "visreq_py.so")
    sys.path.insert(0, str(dest))


def main():
    work = pathlib.Path(tempfile.mkdtemp())
    build(work)
    import visreq_py as vr

    img = vr.Image.load(str(CORPUS / "camera.png"))
    print(img)
    assert vr.delta_v(img, img).value == 0.0

    noisy, params = vr.apply_transform(img, "gaussian_noise", '{"sigma":0.2}')
    score = vr.delta_v(img, noisy)
    print("gaussian_noise", params, score)
    assert score.value > 0.3

    vc = vr.ViewingConditions()
    vc.viewing_distance = 6.0
    print("far viewing", vr.delta_v(img, noisy, vc))

    print("transformations", vr.transformations())
    margin, verdict = vr.decide(0.0045, 0.0061, 0.05)
    print(f"margin {margin:.5f} {verdict}")
    assert verdict == "violated" and abs(margin - 0.01454) < 1e-4

    reqs = vr.load_requirements(str(IMAGENET))
    frost = [e for e in reqs["entries"] if e["transformation"] == "frost"]
    print("frost", [(e["kind"], e["threshold"]) for e in frost])

    data = work / "data"
    data.mkdir()
    lines = ["path,ground_truth"]
    for i, png in enumerate(sorted(CORPUS.glob("*.png"))):
        shutil.copy(png, data / png.name)
        lines.append(f"{png.name},{'pos' if i % 2 else 'neg'}")
    (data / "dataset.csv").write_text("\n".join(lines) + "\n")
    report = vr.check(
        str(IMAGENET), str(data / "dataset.csv"), "gaussian_noise", "correctness",
        model="oracle", n=5, k=4, seed=1,
    )
    print("oracle check", report["verdict"], report["margin"])
    assert report["verdict"] == "satisfied"
    print("ok")


if __name__ == "__main__":
    main()
