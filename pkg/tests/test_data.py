import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from connectogen.data import (
    N_REGIONS,
    ConnectivityMatrix,
    DtiVolume,
    Label,
    SubjectRecord,
    VOLUME_SHAPE,
    generate_synthetic_cohort,
    normalize_connectivity,
    split_cohort,
)
from connectogen.errors import DimensionError, StratificationError, ValidationError


def minmax_oracle(raw):
    """Independent scan of the off-diagonal min/max, element by element."""
    lo, hi = np.inf, -np.inf
    for i in range(raw.shape[0]):
        for j in range(raw.shape[1]):
            if i != j:
                lo = min(lo, raw[i, j])
                hi = max(hi, raw[i, j])
    return lo, hi


class TestNormalizeConnectivity:
    def test_block_pattern_hits_expected_values(self):
        raw = np.zeros((90, 90))
        raw[0, 1] = 0.0
        raw[1, 0] = 100.0
        raw[2, 3] = 100.0
        raw[3, 2] = 100.0
        raw[4, 5] = 200.0
        raw[5, 4] = 200.0
        out = normalize_connectivity(raw).weights
        # (0 + 100)/2 scaled by (x - 0)/200
        assert out[0, 1] == pytest.approx(0.25)
        assert out[2, 3] == 0.5
        assert out[4, 5] == 1.0
        assert out[10, 20] == 0.0

    def test_all_zero_input_maps_to_zero_matrix(self):
        out = normalize_connectivity(np.zeros((90, 90)))
        assert np.array_equal(out.weights, np.zeros((90, 90)))

    def test_random_integer_counts_span_unit_interval(self):
        rng = np.random.default_rng(42)
        raw = rng.integers(0, 5000, size=(90, 90)).astype(float)
        lo, hi = minmax_oracle(raw)
        assert lo < hi
        out = normalize_connectivity(raw).weights
        sym_expected = ((raw - lo) / (hi - lo) + ((raw - lo) / (hi - lo)).T) / 2
        np.fill_diagonal(sym_expected, 0.0)
        assert np.allclose(out, sym_expected, atol=0, rtol=0)
        off = out[~np.eye(90, dtype=bool)]
        # min/max of the pre-symmetrization scaling are 0 and 1; averaging can
        # only keep values inside [0, 1]
        assert off.min() >= 0.0 and off.max() <= 1.0

    def test_scaled_min_max_before_symmetrization(self):
        rng = np.random.default_rng(0)
        raw = rng.random((90, 90)) * 300
        lo, hi = minmax_oracle(raw)
        scaled = (raw - lo) / (hi - lo)
        off = ~np.eye(90, dtype=bool)
        assert scaled[off].min() == 0.0
        assert scaled[off].max() == 1.0

    def test_wrong_shape_rejected(self):
        with pytest.raises(DimensionError):
            normalize_connectivity(np.zeros((89, 90)))

    def test_negative_and_nonfinite_rejected(self):
        bad = np.zeros((90, 90))
        bad[1, 2] = -1.0
        with pytest.raises(ValidationError):
            normalize_connectivity(bad)
        bad[1, 2] = np.nan
        with pytest.raises(ValidationError):
            normalize_connectivity(bad)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 1e6))
    def test_output_always_valid(self, seed, scale):
        rng = np.random.default_rng(seed)
        raw = rng.random((90, 90)) * scale
        out = normalize_connectivity(raw)  # constructor enforces the invariants
        assert isinstance(out, ConnectivityMatrix)

    def test_idempotent_on_normalized_matrices(self):
        rng = np.random.default_rng(3)
        w = rng.random((90, 90))
        w = (w + w.T) / 2
        np.fill_diagonal(w, 0.0)
        w[0, 1] = w[1, 0] = 0.0  # pin the off-diagonal extremes
        w[2, 3] = w[3, 2] = 1.0
        again = normalize_connectivity(w)
        assert np.array_equal(again.weights, w)


class TestTypes:
    def test_volume_shape_enforced(self):
        with pytest.raises(DimensionError):
            DtiVolume(np.zeros((10, 10, 10)), "x")

    def test_volume_rejects_negative(self):
        v = np.zeros(VOLUME_SHAPE, dtype=np.float32)
        v[0, 0, 0] = -1
        with pytest.raises(ValidationError):
            DtiVolume(v, "x")

    def test_matrix_rejects_asymmetry_and_diagonal(self):
        w = np.zeros((90, 90))
        w[0, 1] = 0.5
        with pytest.raises(ValidationError):
            ConnectivityMatrix(w)
        w[1, 0] = 0.5
        ConnectivityMatrix(w.copy())  # now valid
        w[4, 4] = 0.1
        with pytest.raises(ValidationError):
            ConnectivityMatrix(w)

    def test_record_subject_id_mismatch(self, small_cohort):
        rec = small_cohort[0]
        with pytest.raises(ValidationError):
            SubjectRecord(
                subject_id="other",
                volume=rec.volume,
                reference_network=rec.reference_network,
                label=rec.label,
            )


class TestSyntheticCohort:
    def test_empty_cohort(self):
        assert generate_synthetic_cohort(0, 0, 0, seed=9) == []

    def test_bitwise_determinism(self):
        a = generate_synthetic_cohort(2, 2, 2, seed=7)
        b = generate_synthetic_cohort(2, 2, 2, seed=7)
        for ra, rb in zip(a, b):
            assert ra.subject_id == rb.subject_id
            assert np.array_equal(ra.volume.voxels, rb.volume.voxels)
            assert np.array_equal(ra.reference_network.weights, rb.reference_network.weights)

    def test_group_mean_ordering_50_per_group(self):
        cohort = generate_synthetic_cohort(50, 50, 50, seed=1)
        means = {
            lab: np.mean(
                [r.reference_network.mean_connectivity() for r in cohort if r.label == lab]
            )
            for lab in Label
        }
        assert means[Label.NC] > means[Label.EMCI] > means[Label.LMCI]

    @pytest.mark.parametrize("seed", [0, 13, 999, 2**31])
    def test_group_mean_ordering_any_seed_20_per_group(self, seed):
        cohort = generate_synthetic_cohort(20, 20, 20, seed=seed)
        means = {
            lab: np.mean(
                [r.reference_network.mean_connectivity() for r in cohort if r.label == lab]
            )
            for lab in Label
        }
        assert means[Label.NC] > means[Label.EMCI] > means[Label.LMCI]

    def test_volume_tracks_network_row_sums(self, small_cohort):
        rec = small_cohort[0]
        row_mean = rec.reference_network.weights.sum(axis=1) / 89
        region = (np.arange(rec.volume.voxels.size) * 90) // rec.volume.voxels.size
        flat = rec.volume.voxels.ravel()
        regional_mean = np.array([flat[region == r].mean() for r in range(90)])
        # regional intensity is 0.25 + 0.75 * row_mean plus small noise
        assert np.corrcoef(regional_mean, row_mean)[0, 1] > 0.99

    def test_negative_count_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic_cohort(-1, 0, 0, seed=0)


class TestSplitCohort:
    @staticmethod
    def _light_records(counts):
        recs = []
        vol = np.zeros(VOLUME_SHAPE, dtype=np.float32)
        net = np.zeros((90, 90))
        for lab, n in counts.items():
            for i in range(n):
                sid = f"{lab.name.lower()}_{i:03d}"
                recs.append(
                    SubjectRecord(
                        subject_id=sid,
                        volume=DtiVolume(vol, sid),
                        reference_network=ConnectivityMatrix(net),
                        label=lab,
                    )
                )
        return recs

    def test_adni_scale_split_gives_268_train_30_test(self):
        records = self._light_records({Label.NC: 87, Label.EMCI: 135, Label.LMCI: 76})
        assert len(records) == 298
        split = split_cohort(records, 0.1, seed=4)
        assert len(split.train) == 268
        assert len(split.test) == 30

    def test_exact_divisibility(self):
        records = self._light_records({Label.NC: 10, Label.EMCI: 10, Label.LMCI: 10})
        split = split_cohort(records, 0.2, seed=0)
        for lab in Label:
            assert sum(1 for r in split.test if r.label == lab) == 2

    def test_proportions_within_one_subject(self):
        records = self._light_records({Label.NC: 37, Label.EMCI: 21, Label.LMCI: 13})
        split = split_cohort(records, 0.25, seed=8)
        for lab in Label:
            n_lab = sum(1 for r in records if r.label == lab)
            n_test = sum(1 for r in split.test if r.label == lab)
            assert abs(n_test - n_lab * 0.25) <= 1.0

    def test_deterministic_membership(self):
        records = self._light_records({Label.NC: 9, Label.EMCI: 8, Label.LMCI: 7})
        s1 = split_cohort(records, 0.3, seed=2)
        s2 = split_cohort(records, 0.3, seed=2)
        assert [r.subject_id for r in s1.test] == [r.subject_id for r in s2.test]
        assert [r.subject_id for r in s1.train] == [r.subject_id for r in s2.train]

    def test_empty_class_rejected(self):
        records = self._light_records({Label.NC: 5, Label.EMCI: 5, Label.LMCI: 0})
        with pytest.raises(StratificationError):
            split_cohort(records, 0.2, seed=0)

    def test_bad_fraction_rejected(self):
        records = self._light_records({Label.NC: 2, Label.EMCI: 2, Label.LMCI: 2})
        with pytest.raises(ValueError):
            split_cohort(records, 0.0, seed=0)
        with pytest.raises(ValueError):
            split_cohort(records, 1.0, seed=0)
