import io
import json
from unittest import mock

from tscond.cli import main, parse_grid
from tscond.exceptions import ConfigError
from tscond.utils import read_manifest

from .base import BaseTestCase

TOY = ["data.m=4", "data.n=4", "data.kernel=3"]
CONDENSE = ["condense.E=3", "condense.N=2", "condense.pair_stride=4", "condense.L=16"]
EVAL = ["eval.trials=1", "eval.steps=5"]


class TestCli(BaseTestCase):
    def setUp(self):
        super().setUp()
        self.data = str(self.write_series())
        self.buffer = str(self.tmp / "experts.tscb")
        code = main(
            ["buffer", "-q", "--data", self.data, "--out", self.buffer]
            + TOY
            + ["buffer.k=2", "buffer.epochs=3", "buffer.lr=0.05"]
        )
        self.assertEqual(code, 0)

    def distill(self, name: str, *overrides: str) -> str:
        out = str(self.tmp / name)
        code = main(
            ["distill", "-q", "--data", self.data, "--buffer", self.buffer]
            + ["--out-synthetic", out]
            + TOY
            + CONDENSE
            + list(overrides)
        )
        self.assertEqual(code, 0)
        return out

    def evaluate(self, name: str, *source: str) -> str:
        out = str(self.tmp / name)
        code = main(["eval", "-q", "--data", self.data, *source, "--out", out] + TOY + EVAL)
        self.assertEqual(code, 0)
        return out

    def report(self, *reports: str) -> str:
        with mock.patch("sys.stdout", new_callable=io.StringIO) as stdout:
            self.assertEqual(main(["report", "-q", *reports]), 0)
        return stdout.getvalue()

    def test_buffer(self):
        manifest = read_manifest(self.buffer)
        self.assertEqual(manifest["command"], "buffer")
        self.assertEqual(manifest["config"]["buffer"]["k"], 2)
        self.assertIn(self.buffer, manifest["outputs"])
        self.assertIn(self.data, manifest["inputs"])

    def test_pipeline(self):
        synthetic = self.distill("synthetic.csv")
        metrics = self.tmp / "synthetic.metrics.csv"
        self.assertTrue(metrics.exists())
        self.assertEqual(len(metrics.read_text().splitlines()), 4)
        self.assertEqual(read_manifest(synthetic)["method"], "MTT+CondTSF")

        evaluated = self.evaluate("condtsf.eval.csv", "--synthetic", synthetic)
        self.assertEqual(read_manifest(evaluated)["method"], "MTT+CondTSF")
        random = self.evaluate("random.eval.csv", "--random")
        full = str(self.tmp / "full.eval.csv")
        code = main(
            ["eval", "-q", "--data", self.data, "--full", "--out", full]
            + TOY
            + ["eval.trials=1", "eval.full_epochs=1"]
        )
        self.assertEqual(code, 0)

        table = self.report(evaluated, random, full)
        methods = [line.split()[0] for line in table.splitlines()[1:]]
        self.assertEqual(methods, ["Random", "MTT+CondTSF", "Full"])

        out = self.tmp / "summary.csv"
        with mock.patch("sys.stdout", new_callable=io.StringIO):
            self.assertEqual(main(["report", "-q", f"mine={evaluated}", "--out", str(out)]), 0)
        lines = out.read_text().splitlines()
        self.assertEqual(lines[0], "method,mean_mae,std_mae,mean_mse,std_mse")
        self.assertTrue(lines[1].startswith("mine,"))

    def test_without_condtsf(self):
        synthetic = self.distill("mtt.csv", "condense.condtsf=false")
        evaluated = self.evaluate("mtt.eval.csv", "--synthetic", synthetic)
        table = self.report(evaluated)
        self.assertIn("MTT", table)
        self.assertNotIn("CondTSF", table)

    def test_manifest_reproduces_synthetic(self):
        synthetic = self.distill("synthetic.csv")
        first = (self.tmp / "synthetic.csv").read_bytes()
        first_metrics = (self.tmp / "synthetic.metrics.csv").read_bytes()

        code = main(["distill", "-q", "--config", f"{synthetic}.manifest.json"])
        self.assertEqual(code, 0)
        self.assertEqual((self.tmp / "synthetic.csv").read_bytes(), first)
        self.assertEqual((self.tmp / "synthetic.metrics.csv").read_bytes(), first_metrics)

    def test_sweep(self):
        out = self.tmp / "sweep.csv"
        code = main(
            ["sweep", "-q", "--data", self.data, "--buffer", self.buffer]
            + ["--grid", "G=1,3,5;beta=0.01,0.05", "--out", str(out)]
            + TOY
            + CONDENSE
            + EVAL
        )
        self.assertEqual(code, 0)
        lines = out.read_text().splitlines()
        self.assertEqual(lines[0], "G,beta,mean_mae,mean_mse")
        self.assertEqual(len(lines), 7)
        self.assertEqual(
            [line.split(",")[:2] for line in lines[1:3]], [["1", "0.01"], ["1", "0.05"]]
        )
        self.assertTrue((self.tmp / "sweep_cells" / "G=5_beta=0.05.eval.csv").exists())
        manifest = json.loads((self.tmp / "sweep.csv.manifest.json").read_text())
        self.assertEqual(manifest["command"], "sweep")

    def sweep_rows(self, name: str, grid: str, *extra: str) -> dict:
        out = self.tmp / name
        code = main(
            ["sweep", "-q", "--data", self.data, "--buffer", self.buffer]
            + ["--grid", grid, "--out", str(out), *extra]
            + TOY
            + CONDENSE
            + EVAL
        )
        self.assertEqual(code, 0)
        rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
        return {row[0]: row[1:] for row in rows}

    def test_sweep_ignores_cell_order(self):
        forward = self.sweep_rows("forward.csv", "G=1,2,3")
        backward = self.sweep_rows("backward.csv", "G=3,2,1", "--workers", "2")
        self.assertEqual(sorted(forward), ["1", "2", "3"])
        self.assertEqual(forward, backward)

    def test_errors(self):
        missing = str(self.tmp / "missing.csv")
        self.assertEqual(main(["buffer", "-q", "--data", missing] + TOY), 1)
        self.assertEqual(main(["buffer", "-q", "--data", self.data, "condense.beta=1.5"]), 1)
        self.assertEqual(main(["distill", "-q", "--data", self.data] + TOY), 1)

        nodate = str(self.write_file("nodate.csv", "a,b\n" + "1,2\n" * 40))
        with self.assertLogs("tscond.cli", level="ERROR") as logs:
            self.assertEqual(main(["buffer", "-q", "--data", nodate] + TOY), 1)
        self.assertIn("'date' not found", logs.output[0])

        with mock.patch("sys.stderr", new_callable=io.StringIO):
            with self.assertRaises(SystemExit) as ctx:
                main(["unknown"])
        self.assertEqual(ctx.exception.code, 2)

    def test_fingerprint_mismatch(self):
        other = str(self.write_series("other.csv", self.series.values[::-1]))
        code = main(
            ["distill", "-q", "--data", other, "--buffer", self.buffer] + TOY + CONDENSE
        )
        self.assertEqual(code, 1)


class TestParseGrid(BaseTestCase):
    def test_parse_grid(self):
        self.assertEqual(
            parse_grid("G=1,3,5; condense.beta=0.01,0.05"),
            [("G", ["1", "3", "5"]), ("beta", ["0.01", "0.05"])],
        )
        with self.assertRaises(ConfigError):
            parse_grid("gamma=1,2")
        with self.assertRaises(ConfigError):
            parse_grid("G")
        with self.assertRaises(ConfigError):
            parse_grid("")
