import numpy as np
import torch

from tscond.condense import (
    METRICS_HEADER,
    CondenseConfig,
    EpochKind,
    EpochRecord,
    MetricsLog,
    block_starts,
    condtsf_update,
    distill,
    label_error,
    random_baseline,
)
from tscond.data import Origin, SyntheticSeries, WindowSpec, sample_init_synthetic
from tscond.exceptions import NoBlocks, NoSyntheticPairs, TrainTooShort
from tscond.forecaster import Arch, ParamLayout, ParamVector, flatten, init_params
from tscond.unroll import UnrollConfig

from .base import BaseTestCase, sinusoid


def scalar_expert(weight: float) -> ParamVector:
    layout = ParamLayout(Arch.LINEAR, WindowSpec(1, 1), kernel=1)
    return ParamVector(torch.tensor([0.0, 0.0, weight, 0.0], dtype=torch.float64), layout)


class TestCondTSF(BaseTestCase):
    def test_scalar_update(self):
        s = SyntheticSeries([[1.0], [0.0]])
        expert = scalar_expert(2.0)
        self.assertEqual(label_error(s, expert), 4.0)

        updated = condtsf_update(s, expert, WindowSpec(1, 1), beta=0.01)
        self.assertEqual(updated.values[0, 0], 1.0)
        self.assertAlmostEqual(updated.values[1, 0], 0.02, delta=1e-15)
        self.assertAlmostEqual(label_error(updated, expert), 3.9204, delta=1e-12)

    def test_beta_extremes(self):
        s = SyntheticSeries(sinusoid(20, 2))
        expert = flatten(init_params(Arch.LINEAR, self.spec, 0, kernel=3))

        unchanged = condtsf_update(s, expert, beta=0.0)
        np.testing.assert_array_equal(unchanged.values, s.values)

        replaced = condtsf_update(s, expert, beta=1.0)
        self.assertEqual(label_error(replaced, expert), 0.0)
        # rows 16..19 are a partial block and stay as they were
        np.testing.assert_array_equal(replaced.values[16:], s.values[16:])
        np.testing.assert_array_equal(replaced.values[:4], s.values[:4])
        np.testing.assert_array_equal(replaced.values[8:12], s.values[8:12])

    def test_decay_identity(self):
        s = SyntheticSeries(sinusoid(48, 2, seed=1))
        expert = flatten(init_params(Arch.LINEAR, self.spec, 2, kernel=3))
        before = label_error(s, expert)

        once = condtsf_update(s, expert, beta=0.01)
        self.assertLess(abs(label_error(once, expert) / before - 0.9801), 1e-10)

        current = s
        for _ in range(10):
            current = condtsf_update(current, expert, beta=0.01)
        expected = 0.9801**10
        self.assertLess(abs(label_error(current, expert) / before - expected) / expected, 1e-9)

    def test_zero_expert(self):
        layout = ParamLayout(Arch.LINEAR, self.spec, kernel=3)
        zero = ParamVector(torch.zeros(layout.size, dtype=torch.float64), layout)
        self.assertEqual(label_error(np.zeros((16, 2)), zero), 0.0)

    def test_no_blocks(self):
        self.assertEqual(block_starts(20, self.spec), [0, 8])
        with self.assertRaises(NoBlocks):
            block_starts(7, self.spec)
        with self.assertRaises(ValueError):
            condtsf_update(SyntheticSeries(np.zeros((8, 2))), scalar_expert(1.0), beta=1.5)


class TestMetricsLog(BaseTestCase):
    def test_append_and_csv(self):
        log = MetricsLog()
        log.append(EpochRecord(1, EpochKind.MATCH, 0.5, 2.0))
        log.append(EpochRecord(2, EpochKind.CONDTSF, None, 1.5, 0.3, 0.2))
        with self.assertRaises(ValueError):
            log.append(EpochRecord(2, EpochKind.MATCH, 0.4, 1.0))
        with self.assertRaises(ValueError):
            log.append(EpochRecord(3, EpochKind.MATCH, 0.4, -1.0))

        path = self.tmp / "metrics.csv"
        log.to_csv(path)
        lines = path.read_text().splitlines()
        self.assertEqual(lines[0], ",".join(METRICS_HEADER))
        self.assertEqual(lines[1], "1,match,0.5,2,,")
        self.assertEqual(lines[2], "2,condtsf,,1.5,0.29999999999999999,0.20000000000000001")


class TestDistill(BaseTestCase):
    def setUp(self):
        super().setUp()
        self.buf = self.make_buffer(k=2)
        self.cfg = dict(
            unroll=UnrollConfig(steps=2, lr=0.01, pair_stride=4),
            synthetic_length=16,
            seed=3,
        )

    def test_schedule(self):
        s, log = distill(self.buf, self.split.train, CondenseConfig(epochs=6, gap=3, **self.cfg))
        self.assertIs(s.origin, Origin.DISTILLED)
        self.assertEqual(s.values.shape, (16, 2))
        m, c = EpochKind.MATCH, EpochKind.CONDTSF
        self.assertEqual(log.kinds(), [m, m, c, m, m, c])
        self.assertEqual(log.column("epoch"), [1, 2, 3, 4, 5, 6])
        self.assertIsNone(log.records[2].param_error)
        self.assertIsNotNone(log.records[0].param_error)

    def test_without_condtsf(self):
        cfg = CondenseConfig(epochs=4, gap=1, condtsf=False, **self.cfg)
        _, log = distill(self.buf, self.split.train, cfg)
        self.assertNotIn(EpochKind.CONDTSF, log.kinds())

    def test_single_condtsf_epoch(self):
        buf = self.make_buffer(k=1)
        cfg = CondenseConfig(epochs=1, gap=1, beta=0.2, **self.cfg)
        s, log = distill(buf, self.split.train, cfg)
        self.assertEqual(log.kinds(), [EpochKind.CONDTSF])

        init = sample_init_synthetic(self.split.train, 16, 3)
        expected = condtsf_update(init, buf.pairs[0], self.spec, 0.2)
        np.testing.assert_array_equal(s.values, expected.values)

    def test_deterministic(self):
        cfg = CondenseConfig(epochs=4, **self.cfg)
        a, log_a = distill(self.buf, self.split.train, cfg)
        b, log_b = distill(self.buf, self.split.train, cfg)
        np.testing.assert_array_equal(a.values, b.values)
        self.assertEqual(log_a.column("label_error"), log_b.column("label_error"))

    def test_condtsf_lowers_label_error(self):
        buf = self.make_buffer(k=1)
        common = dict(epochs=3, gap=3, beta=0.5, **self.cfg)
        _, with_condtsf = distill(buf, self.split.train, CondenseConfig(**common))
        _, without = distill(buf, self.split.train, CondenseConfig(condtsf=False, **common))
        self.assertLess(with_condtsf.records[-1].label_error, without.records[-1].label_error)

    def test_param_error_falls_over_epochs(self):
        buf = self.make_buffer(k=1)
        cfg = CondenseConfig(
            epochs=200,
            condtsf=False,
            unroll=UnrollConfig(steps=5, lr=0.01, pair_stride=4),
            synthetic_length=16,
            seed=3,
        )
        _, log = distill(buf, self.split.train, cfg)
        errors = log.column("param_error")
        self.assertLess(np.median(errors[149:]), np.median(errors[:50]))

    def test_evaluator(self):
        calls = []

        def evaluator(s):
            calls.append(s.values.copy())
            return 1.0, 2.0

        cfg = CondenseConfig(epochs=4, eval_every=2, **self.cfg)
        _, log = distill(self.buf, self.split.train, cfg, evaluator)
        self.assertEqual(len(calls), 2)
        self.assertEqual(log.column("test_mae"), [None, 1.0, None, 1.0])
        self.assertEqual(log.column("test_mse"), [None, 2.0, None, 2.0])

    def test_too_short(self):
        cfg = CondenseConfig(epochs=1, unroll=UnrollConfig(), synthetic_length=7)
        with self.assertRaises(NoSyntheticPairs):
            distill(self.buf, self.split.train, cfg)

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            CondenseConfig(beta=1.5)
        with self.assertRaises(ValueError):
            CondenseConfig(outer_momentum=1.0)

    def test_random_baseline(self):
        s = random_baseline(self.split.train, 48, 1)
        self.assertIs(s.origin, Origin.RANDOM_SEGMENT)
        with self.assertRaises(TrainTooShort):
            random_baseline(self.split.train, 1000, 1)
