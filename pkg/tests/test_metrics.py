import math

import numpy as np
import pytest
from scipy import linalg

from cheff.datapipe.images import write_pgm
from cheff.errors import DataError, ShapeError
from cheff.metrics.distribution import FeatureStats, feature_stats, frechet_distance, kernel_mmd, polynomial_kernel
from cheff.metrics.reconstruction import ImagePair, aggregate, gaussian_window, mse, pair_metrics, psnr, ssim
from cheff.pipeline.evaluate import distribution_report, image_features, pairwise_report


def _image(seed, shape=(16, 16)):
    return np.random.default_rng(seed).uniform(0.1, 0.9, size=shape)


def test_psnr_follows_mse():
    reference = np.full((12, 12), 0.5)
    candidate = reference + 0.1
    pair = ImagePair(reference, candidate)
    assert mse(pair) == pytest.approx(0.01)
    assert psnr(pair) == pytest.approx(10.0 * math.log10(1.0 / 0.01))
    assert psnr(ImagePair(reference, reference)) == math.inf


def test_ssim_of_identical_images_is_one():
    image = _image(0)
    assert ssim(ImagePair(image, image)) == pytest.approx(1.0)
    assert ssim(ImagePair(image, np.clip(image + 0.2 * _image(1) - 0.1, 0, 1))) < 1.0


def test_ssim_matches_a_window_by_window_oracle():
    x = _image(2, (12, 13))
    y = _image(3, (12, 13))
    window = gaussian_window()
    c1, c2 = 0.01**2, 0.03**2
    scores = []
    for i in range(12 - 10):
        for j in range(13 - 10):
            px, py = x[i : i + 11, j : j + 11], y[i : i + 11, j : j + 11]
            mx, my = np.sum(window * px), np.sum(window * py)
            vx = np.sum(window * (px - mx) ** 2)
            vy = np.sum(window * (py - my) ** 2)
            cov = np.sum(window * (px - mx) * (py - my))
            scores.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    assert ssim(ImagePair(x, y)) == pytest.approx(float(np.mean(scores)), abs=1e-10)


def test_ssim_averages_channels():
    x = np.stack([_image(4), _image(5)])
    y = np.stack([_image(4), _image(6)])
    expected = (1.0 + ssim(ImagePair(x[1], y[1]))) / 2.0
    assert ssim(ImagePair(x, y)) == pytest.approx(expected)


def test_image_pair_validation():
    with pytest.raises(ShapeError):
        ImagePair(np.zeros((12, 12)), np.zeros((12, 13)))
    with pytest.raises(DataError):
        ImagePair(np.zeros((12, 12)), np.full((12, 12), 1.5))
    with pytest.raises(ShapeError):
        ssim(ImagePair(np.zeros((8, 8)), np.zeros((8, 8))))


def test_aggregate_takes_means_and_counts_infinite_psnr():
    image = _image(7)
    rows = [pair_metrics(ImagePair(image, image)), pair_metrics(ImagePair(image, _image(8)))]
    summary = aggregate(rows)
    assert summary["count"] == 2
    assert summary["psnr_infinite"] == 1
    assert summary["psnr_db"] == pytest.approx(rows[1]["psnr_db"])
    assert summary["mse"] == pytest.approx(rows[1]["mse"] / 2.0)
    with pytest.raises(DataError):
        aggregate([])


def test_psnr_of_a_reported_mse_and_per_image_averaging():
    reference = np.full((16, 16), 0.5)
    pair = ImagePair(reference, reference + math.sqrt(0.0039))
    assert mse(pair) == pytest.approx(0.0039, rel=1e-9)
    assert round(psnr(pair), 2) == 24.09
    assert abs(psnr(pair) - 24.05) < 0.1
    # mean of per-image PSNR sits above the PSNR of the mean MSE
    rows = [pair_metrics(ImagePair(reference, reference + offset)) for offset in (0.01, 0.03)]
    summary = aggregate(rows)
    assert summary["mse"] == pytest.approx(0.0005)
    assert summary["psnr_db"] == pytest.approx((40.0 + 10.0 * math.log10(1.0 / 0.0009)) / 2.0)
    assert summary["psnr_db"] > 10.0 * math.log10(1.0 / summary["mse"]) + 2.0


def test_frechet_distance_closed_forms():
    a = FeatureStats(mean=[0.0, 1.0], covariance=np.diag([4.0, 1.0]), count=10)
    b = FeatureStats(mean=[1.0, 1.0], covariance=np.diag([1.0, 9.0]), count=10)
    # diagonal covariances: |dmu|^2 + sum (sqrt(a_i) - sqrt(b_i))^2
    assert frechet_distance(a, b) == pytest.approx(1.0 + 1.0 + 4.0)
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-9)


def test_feature_stats_and_frechet_validation():
    features = np.random.default_rng(0).normal(size=(50, 3))
    stats = feature_stats(features)
    assert stats.count == 50
    assert np.allclose(stats.covariance, np.cov(features, rowvar=False))
    with pytest.raises(ShapeError):
        feature_stats(features[:1])
    with pytest.raises(ShapeError):
        FeatureStats(mean=[0.0, 0.0], covariance=[[1.0, 0.5], [0.0, 1.0]], count=3)
    with pytest.raises(ShapeError):
        frechet_distance(stats, feature_stats(np.ones((5, 2)) + np.arange(5)[:, None]))


def test_kernel_mmd_matches_pairwise_sums():
    picker = np.random.default_rng(1)
    x = picker.normal(size=(6, 4))
    y = picker.normal(loc=0.5, size=(5, 4))
    k = lambda a, b: (a @ b / 4 + 1.0) ** 3
    xx = sum(k(x[i], x[j]) for i in range(6) for j in range(6) if i != j) / 30
    yy = sum(k(y[i], y[j]) for i in range(5) for j in range(5) if i != j) / 20
    xy = sum(k(x[i], y[j]) for i in range(6) for j in range(5)) / 30
    assert kernel_mmd(x, y) == pytest.approx(xx + yy - 2 * xy)
    assert polynomial_kernel(x, y).shape == (6, 5)


def _naive_stats(features):
    n, d = features.shape
    mean = [sum(features[k, i] for k in range(n)) / n for i in range(d)]
    covariance = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            covariance[i, j] = sum((features[k, i] - mean[i]) * (features[k, j] - mean[j]) for k in range(n)) / (n - 1)
    return np.array(mean), covariance


def _naive_frechet(mean_a, cov_a, mean_b, cov_b):
    cross = linalg.sqrtm(cov_a @ cov_b)
    return float(np.sum((mean_a - mean_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross).real)


@pytest.mark.parametrize("n", [10, 25, 50])
def test_frechet_distance_matches_a_naive_oracle(n):
    picker = np.random.default_rng(n)
    mixing = np.eye(8) + 0.3 * picker.normal(size=(8, 8))
    a = picker.normal(size=(n, 8)) @ mixing
    b = picker.normal(loc=0.3, size=(n, 8)) @ mixing.T
    mean_a, cov_a = _naive_stats(a)
    mean_b, cov_b = _naive_stats(b)
    stats_a, stats_b = feature_stats(a), feature_stats(b)
    assert np.allclose(stats_a.covariance, cov_a, rtol=0.0, atol=1e-10)
    assert frechet_distance(stats_a, stats_b) == pytest.approx(_naive_frechet(mean_a, cov_a, mean_b, cov_b), rel=1e-10, abs=1e-10)


def test_frechet_distance_with_correlated_covariance():
    a = FeatureStats(mean=[0.0, 0.0], covariance=[[2.0, 1.0], [1.0, 2.0]], count=10)
    b = FeatureStats(mean=[0.0, 0.0], covariance=np.eye(2), count=10)
    # eigenvalues 3 and 1: Tr(A) + Tr(I) - 2 (sqrt(3) + 1)
    assert frechet_distance(a, b) == pytest.approx(4.0 - 2.0 * math.sqrt(3.0), abs=1e-12)
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-12)


@pytest.mark.parametrize("sizes", [(2, 3), (17, 30), (50, 50)])
def test_kernel_mmd_matches_a_naive_oracle(sizes):
    m, n = sizes
    picker = np.random.default_rng(m + n)
    x = picker.normal(size=(m, 8))
    y = picker.normal(loc=0.2, scale=1.3, size=(n, 8))

    def k(u, v):
        return (sum(u[i] * v[i] for i in range(8)) / 8 + 1.0) ** 3

    xx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    yy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    xy = sum(k(x[i], y[j]) for i in range(m) for j in range(n)) / (m * n)
    assert kernel_mmd(x, y) == pytest.approx(xx + yy - 2.0 * xy, rel=1e-10, abs=1e-10)


def test_kernel_mmd_separates_shifted_sets():
    picker = np.random.default_rng(2)
    base = picker.normal(size=(200, 3))
    same = picker.normal(size=(200, 3))
    shifted = picker.normal(loc=2.0, size=(200, 3))
    assert abs(kernel_mmd(base, same)) < kernel_mmd(base, shifted)
    with pytest.raises(ShapeError):
        kernel_mmd(base, shifted[:, :2])


def _write_set(directory, seeds):
    directory.mkdir()
    for index, seed in enumerate(seeds):
        write_pgm(directory / f"img_{index}.pgm", _image(seed))
    return directory


def test_pairwise_report_pairs_images_by_name(tmp_path):
    reference = _write_set(tmp_path / "ref", [1, 2])
    same = _write_set(tmp_path / "same", [1, 2])
    report = pairwise_report(reference, same)
    assert report["count"] == 2
    assert report["mse"] == 0.0
    assert report["psnr_infinite"] == 2
    assert report["ssim"] == pytest.approx(1.0)

    single = pairwise_report(reference / "img_0.pgm", tmp_path / "same" / "img_1.pgm")
    assert single["count"] == 1 and single["mse"] > 0.0

    partial = _write_set(tmp_path / "partial", [1])
    with pytest.raises(DataError):
        pairwise_report(reference, partial)
    with pytest.raises(DataError):
        pairwise_report(tmp_path / "nowhere", reference)


def test_distribution_report(tmp_path):
    first = _write_set(tmp_path / "a", range(6))
    second = _write_set(tmp_path / "b", range(6, 12))
    assert image_features(sorted(first.glob("*.pgm"))).shape == (6, 64)
    report = distribution_report(first, second)
    assert report["count_a"] == 6 and report["count_b"] == 6
    assert list(report) == ["count_a", "count_b", "frechet", "mmd2"]
    assert report["frechet"] >= 0.0
    assert distribution_report(first, first)["frechet"] == pytest.approx(0.0, abs=1e-4)
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataError):
        distribution_report(first, tmp_path / "empty")
