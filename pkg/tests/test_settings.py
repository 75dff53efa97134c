import json

from tscond.exceptions import ConfigError, MissingArtifact
from tscond.forecaster import Optimizer
from tscond.settings import DEFAULTS, RunConfig, parse_config

from .base import BaseTestCase


class TestSettings(BaseTestCase):
    def test_defaults(self):
        cfg = parse_config()
        self.assertEqual(cfg.data.m, 24)
        self.assertEqual(cfg.data.n, 24)
        self.assertEqual(cfg.condense.L, 48)
        self.assertEqual(cfg.condense.beta, 0.01)
        self.assertEqual(cfg.condense.G, 3)
        self.assertEqual(cfg.eval.trials, 5)
        self.assertEqual(cfg.as_dict(), DEFAULTS)

    def test_invalid_section_or_setting(self):
        cfg = RunConfig()
        with self.assertRaises(AttributeError):
            cfg.model  # noqa: B018
        with self.assertRaises(AttributeError):
            cfg.condense.gamma  # noqa: B018

    def test_bounds(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(overrides=["condense.beta=1.5"])
        self.assertEqual(ctx.exception.violations, [("condense.beta", "must be in (0,1)")])

    def test_precedence(self):
        path = self.write_file("run.ini", "[condense]\nG = 5\nbeta = 0.05  # stronger\n")
        self.assertEqual(parse_config(path).condense.G, 5)
        cfg = parse_config(path, ["condense.G=7"])
        self.assertEqual(cfg.condense.G, 7)
        self.assertEqual(cfg.condense.beta, 0.05)

    def test_collects_every_violation(self):
        path = self.write_file("run.ini", "[data]\nm = many\n\n[model]\nwidth = 3\n")
        with self.assertRaises(ConfigError) as ctx:
            parse_config(path, ["condense.gamma=1", "eval.trials=0", "broken"])
        keys = {key for key, _ in ctx.exception.violations}
        self.assertEqual(keys, {"data.m", "model", "condense.gamma", "eval.trials", "broken"})
        self.assertIn("condense.gamma: unknown key", str(ctx.exception))

    def test_types(self):
        cfg = parse_config(
            overrides=[
                "condense.condtsf=false",
                "buffer.optimizer=SGD",
                "data.date_column=",
                "condense.outer_lr=1",
            ]
        )
        self.assertIs(cfg.condense.condtsf, False)
        self.assertEqual(cfg.buffer.optimizer, "sgd")
        self.assertIsNone(cfg.data.date_column)
        self.assertEqual(cfg.condense.outer_lr, 1.0)
        self.assertIs(cfg.expert_train_config().optimizer, Optimizer.SGD)

    def test_synthetic_length(self):
        with self.assertRaises(ConfigError):
            parse_config(overrides=["condense.L=40"])
        cfg = parse_config(overrides=["condense.preset=standard", "data.name=ETTh2"])
        self.assertEqual(cfg.synthetic_length(), 57)
        self.assertEqual(cfg.synthetic_length("weather"), 105)
        self.assertEqual(cfg.condense_config(cfg.synthetic_length()).synthetic_length, 57)

    def test_train_configs(self):
        cfg = parse_config(overrides=["buffer.batch_size=0", "eval.steps=10"])
        self.assertIsNone(cfg.expert_train_config().batch_size)
        self.assertEqual(cfg.eval_train_config().epochs, 10)
        self.assertIsNone(cfg.eval_train_config().batch_size)
        self.assertEqual(cfg.full_train_config().batch_size, 32)
        condense = cfg.condense_config()
        self.assertEqual((condense.unroll.steps, condense.unroll.lr), (20, 0.01))

    def test_manifest_as_config(self):
        cfg = parse_config(overrides=["condense.G=4", "data.path=x.csv"])
        path = self.write_file("run.manifest.json", json.dumps({"config": cfg.as_dict()}))
        again = parse_config(path)
        self.assertEqual(again.as_dict(), cfg.as_dict())

    def test_replace(self):
        cfg = parse_config(overrides=["condense.G=4"])
        other = cfg.replace(["condense.beta=0.05"])
        self.assertEqual((other.condense.G, other.condense.beta), (4, 0.05))
        self.assertEqual(cfg.condense.beta, 0.01)
        with self.assertRaises(ConfigError):
            cfg.replace(["condense.G=0"])

    def test_reload(self):
        cfg = RunConfig({"condense": {"G": 5}})
        self.assertEqual(cfg.condense.G, 5)
        cfg.user_settings["condense"]["G"] = 6
        self.assertEqual(cfg.condense.G, 5)  # cached
        cfg.reload()
        self.assertEqual(cfg.condense.G, 6)

    def test_missing_file(self):
        with self.assertRaises(MissingArtifact):
            parse_config(self.tmp / "absent.ini")
