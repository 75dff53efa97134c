# Sphinx configuration for the tscond API docs.
import os
import sys

sys.path.insert(0, os.path.abspath("../"))
# Importing the package must not draw progress bars into the build log.
os.environ.setdefault("TSCOND_PROGRESS", "0")

project = "tscond"
copyright = "2026, tscond developers"  # noqa: A001
author = "tscond developers"
release = "0.1"

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
]
autodoc_member_order = "bysource"

templates_path = ["_templates"]
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

html_theme = "sphinx_rtd_theme"
html_static_path = ["_static"]

master_doc = "index"
