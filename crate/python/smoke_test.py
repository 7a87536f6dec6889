#!/usr/bin/env python3
"""End-to-end smoke test for the cdp_twin Python extension.

Builds the extension module with cargo, loads it, and walks the main
pipeline: template generation, channel fitting, both sampling directions,
the diffusion denoiser, and the metric/aggregation helpers.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
BUILD_DIR = Path(__file__).resolve().parent / "_build"


def build_extension():
    subprocess.run(
        [
            "cargo",
            "build",
            "-p",
            "cdp-twin-py",
            "--release",
            "--features",
            "extension-module",
        ],
        cwd=REPO,
        check=True,
    )
    if sys.platform == "darwin":
        built = REPO / "target/release/libcdp_twin.dylib"
    elif sys.platform.startswith("win"):
        built = REPO / "target/release/cdp_twin.dll"
    else:
        built = REPO / "target/release/libcdp_twin.so"
    BUILD_DIR.mkdir(exist_ok=True)
    target = BUILD_DIR / ("cdp_twin.pyd" if sys.platform.startswith("win") else "cdp_twin.so")
    shutil.copy2(built, target)
    sys.path.insert(0, str(BUILD_DIR))


def main():
    build_extension()
    import cdp_twin as ct

    # Templates: geometry, density, determinism.
    z = ct.Template.generate(48, 48, 0.5, seed=7)
    assert (z.width, z.height) == (48, 48)
    assert abs(z.density - 0.5) < 0.1
    assert z.bits() == ct.Template.generate(48, 48, 0.5, seed=7).bits()
    z3 = z.upscale(3)
    assert (z3.width, z3.height) == (144, 144)

    # Synthetic print channel and twin refit.
    truth = ct.ChannelModel.synthetic(
        "print", 1, contrast=0.4, dot_gain=0.3, noise_floor=0.02, noise_gain=0.1
    )
    assert truth.direction == "print" and truth.scale == 1
    pairs = []
    for i in range(40):
        t = ct.Template.generate(48, 48, 0.5, seed=100 + i)
        (x,) = truth.simulate_print(t, 1, seed=200 + i)
        pairs.append((t, x))
    twin = ct.ChannelModel.fit(pairs, "print", 1)
    true_flips = [truth.pattern_entry(p)[3] for p in range(512)]
    twin_flips = [twin.pattern_entry(p)[3] for p in range(512)]
    r = ct.pearson(true_flips, twin_flips)
    assert r > 0.9, f"twin flip correlation {r}"
    assert twin.observed_patterns() == 512

    # Estimate direction round trip: template -> print -> template estimate.
    est = ct.ChannelModel.fit(pairs, "estimate", 1)
    z0, x0 = pairs[0]
    (zt,) = est.estimate_template(x0, 1, seed=1)
    recovered = zt.binarize()
    frac = ct.hamming(z0, recovered)
    assert frac < 0.1, f"estimate round trip hamming {frac}"

    # Metrics sanity.
    assert ct.mse(x0, x0) == 0.0
    assert abs(ct.ssim(x0, x0) - 1.0) < 1e-12
    tau, degenerate = x0.otsu_threshold()
    assert 0.0 < tau < 1.0 and not degenerate

    # Model file round trip.
    with tempfile.TemporaryDirectory() as d:
        model_path = Path(d) / "model.json"
        twin.save(model_path)
        back = ct.ChannelModel.load(model_path)
        assert back.pattern_entry(17) == twin.pattern_entry(17)

        img_path = Path(d) / "img.pgm"
        x0.save_pgm(img_path, depth=16)
        again = ct.GrayImage.load_pgm(img_path)
        worst = max(abs(a - b) for a, b in zip(x0.pixels(), again.pixels()))
        assert worst <= 1.0 / 65535.0, f"pgm round trip error {worst}"

    # Diffusion: schedule endpoints, zero-denoiser calibration, sampling.
    sched = ct.NoiseSchedule.linear(1e-4, 0.09, 30)
    assert sched.beta(1) == 1e-4 and sched.beta(30) == 0.09
    assert 0.0 < sched.alpha_bar(30) < sched.alpha_bar(1) < 1.0
    zero_loss = ct.zero_denoiser_loss(x0, x0, sched, batch=400, seed=5)
    assert abs(zero_loss - 1.0) < 0.1, f"zero denoiser loss {zero_loss}"
    den_pairs = [(x, x) for _, x in pairs[:3]]
    den = ct.LinearDenoiser.fit(den_pairs, sched, buckets=6, patch_radius=1, seed=11)
    fitted_loss = den.loss(den_pairs[0][1], den_pairs[0][0], sched, batch=400, seed=5)
    assert fitted_loss < zero_loss, f"{fitted_loss} !< {zero_loss}"
    samples = den.sample(x0, sched, k=2, seed=3)
    assert len(samples) == 2
    assert samples[0].pixels() == den.sample(x0, sched, k=2, seed=3)[0].pixels()
    with tempfile.TemporaryDirectory() as d:
        den_path = Path(d) / "denoiser.json"
        den.save(den_path)
        reloaded = ct.LinearDenoiser.load(den_path)
        assert reloaded.sample(x0, sched, k=1, seed=9)[0].pixels() == \
            den.sample(x0, sched, k=1, seed=9)[0].pixels()

    # Aggregation: mean over more realizations gets closer to the mean field.
    stack21 = truth.simulate_print(z0, 21, seed=77)
    mean21 = ct.aggregate(stack21, "mean")
    mse1 = ct.aggregate_score(stack21[:1], mean21, "mean", "mse")
    mse21 = ct.aggregate_score(stack21, mean21, "mean", "mse")
    assert mse21 < mse1
    rows = ct.k_sweep(stack21, x0, [1, 5, 21], ["mean", "mean-of-scores"], ["mse", "ssim"])
    assert len(rows) == 3 * 2 * 2
    smap = ct.std_map(stack21)
    assert max(smap.pixels()) > 0.0

    # Pattern statistics and the deterministic generator.
    stats = ct.pattern_statistics(z0, stack21, 1)
    assert len(stats) == 512
    total = sum(row[1] for row in stats)
    assert total == 21 * 46 * 46, total
    gen = ct.PatternGenerator.fit(pairs, "print", 1)
    det = gen.generate_print(z0)
    assert ct.mse(det, x0) < 0.05

    # Wilcoxon direction: strongly negative differences give a small p.
    n, w_plus, p = ct.wilcoxon([-1.0, -2.0, -0.5, -1.5, -3.0, -0.7, -2.2, 0.1])
    assert n == 8 and p < 0.05, (n, w_plus, p)

    # Turbo loss hand case: 0.1 + 1*0.2 + 2*0.3 + 2*0.5*0.4 = 1.3.
    one = lambda v: ct.GrayImage(1, 1, [v])
    zb = ct.Template(1, 1, [0])
    out = ct.turbo_loss(
        zb, one(0.1), one(0.4), one(0.0), one(0.2), one(0.3),
        lambda_t=2.0, lambda_d=1.0, lambda_r=0.5,
    )
    assert math.isclose(out["total"], 1.3, abs_tol=1e-12), out

    # Error mapping: wrong-direction use must raise ValueError.
    try:
        est.simulate_print(z0, 1, seed=0)
    except ValueError:
        pass
    else:
        raise AssertionError("estimate-direction model accepted simulate_print")

    print("smoke test passed: templates, channel, ddpm, metrics, aggregation, turbo")


if __name__ == "__main__":
    main()
