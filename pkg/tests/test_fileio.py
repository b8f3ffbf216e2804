import numpy as np
import pytest

from connectogen.data import ConnectivityMatrix, DtiVolume, VOLUME_SHAPE
from connectogen.errors import FormatError
from connectogen.fileio import (
    load_cohort,
    load_matrix,
    load_volume,
    save_cohort,
    save_matrix,
    save_volume,
)


class TestMatrixRoundTrip:
    def test_zero_matrix(self, tmp_path):
        m = ConnectivityMatrix(np.zeros((90, 90)))
        save_matrix(m, tmp_path / "m.csv")
        back = load_matrix(tmp_path / "m.csv")
        assert np.array_equal(back.weights, m.weights)

    def test_random_matrix_within_float32_quantization(self, tmp_path):
        rng = np.random.default_rng(5)
        w = rng.random((90, 90))
        w = (w + w.T) / 2
        np.fill_diagonal(w, 0.0)
        m = ConnectivityMatrix(w)
        save_matrix(m, tmp_path / "m.csv")
        back = load_matrix(tmp_path / "m.csv")
        expected = m.weights.astype(np.float32).astype(np.float64)
        assert np.array_equal(back.weights, expected)
        assert np.abs(back.weights - m.weights).max() <= np.abs(
            m.weights - expected
        ).max() + 1e-18

    def test_short_row_rejected(self, tmp_path):
        m = ConnectivityMatrix(np.zeros((90, 90)))
        save_matrix(m, tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        lines[3] = ",".join(lines[3].split(",")[:89])
        (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError):
            load_matrix(tmp_path / "bad.csv")

    def test_missing_row_rejected(self, tmp_path):
        m = ConnectivityMatrix(np.zeros((90, 90)))
        save_matrix(m, tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()[:89]
        (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError):
            load_matrix(tmp_path / "bad.csv")

    def test_non_numeric_rejected(self, tmp_path):
        m = ConnectivityMatrix(np.zeros((90, 90)))
        save_matrix(m, tmp_path / "m.csv")
        text = (tmp_path / "m.csv").read_text().replace("0.0", "abc", 1)
        (tmp_path / "bad.csv").write_text(text)
        with pytest.raises(FormatError):
            load_matrix(tmp_path / "bad.csv")


class TestVolumeRoundTrip:
    def test_roundtrip_exact_at_float32(self, tmp_path):
        rng = np.random.default_rng(1)
        vox = rng.random(VOLUME_SHAPE).astype(np.float32)
        vol = DtiVolume(vox, "sub01")
        save_volume(vol, tmp_path / "v.f32")
        back = load_volume(tmp_path / "v.f32")
        assert back.subject_id == "sub01"
        assert np.array_equal(back.voxels, vox)

    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "v.f32").write_bytes(b"\0" * 16)
        with pytest.raises(FormatError):
            load_volume(tmp_path / "v.f32")

    def test_size_mismatch(self, tmp_path):
        vol = DtiVolume(np.zeros(VOLUME_SHAPE, dtype=np.float32), "s")
        save_volume(vol, tmp_path / "v.f32")
        data = (tmp_path / "v.f32").read_bytes()
        (tmp_path / "v.f32").write_bytes(data[:-4])
        with pytest.raises(FormatError):
            load_volume(tmp_path / "v.f32")

    def test_bad_sidecar_shape(self, tmp_path):
        vol = DtiVolume(np.zeros(VOLUME_SHAPE, dtype=np.float32), "s")
        save_volume(vol, tmp_path / "v.f32")
        (tmp_path / "v.f32.json").write_text('{"shape": [10, 10, 10], "subject_id": "s"}')
        with pytest.raises(FormatError):
            load_volume(tmp_path / "v.f32")


class TestCohortIO:
    def test_cohort_roundtrip(self, tmp_path, small_cohort):
        save_cohort(small_cohort, tmp_path / "cohort", seed=11)
        back = load_cohort(tmp_path / "cohort")
        assert [r.subject_id for r in back] == [r.subject_id for r in small_cohort]
        for a, b in zip(small_cohort, back):
            assert a.label == b.label
            assert np.array_equal(
                a.reference_network.weights.astype(np.float32),
                b.reference_network.weights.astype(np.float32),
            )
            assert np.array_equal(a.volume.voxels.astype(np.float32), b.volume.voxels)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError):
            load_cohort(tmp_path)
