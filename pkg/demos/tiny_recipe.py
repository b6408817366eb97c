"""A complete v1 run on a corpus small enough to finish in under a minute.

Stages, each cached in the workspace: simulate rooms, synthesise noisy
reverberant utterances, extract features, train one BLSTM per target, then
score the eval split against the constant mean predictor.  Six rooms and one
epoch will not learn much; the point is the artifact layout, which is listed
at the end.  Rerunning with the same workspace reuses every stage.

    python demos/tiny_recipe.py [workspace]
"""

import json
import sys
import tempfile
from pathlib import Path

from nira.cli import main as nira

CONFIG = {
    "seed": 11,
    "corpora": {"primary": {"rooms": 6, "utterances": 36, "duration_s": 1.5}},
    "train": {"max_epochs": 1, "minibatch": 25},
}


def run(workspace: Path):
    workspace.mkdir(parents=True, exist_ok=True)
    config = workspace / "config.json"
    config.write_text(json.dumps({**CONFIG, "workspace": str(workspace / "ws")}, indent=2))
    code = nira(["recipe", "v1", "--config", str(config)])
    if code:
        sys.exit(code)

    print("\nartifacts:")
    for path in sorted((workspace / "ws").rglob("*")):
        if path.is_file() and "cache" not in path.parts and path.suffix != ".wav":
            print("  ", path.relative_to(workspace))


if __name__ == "__main__":
    if len(sys.argv) > 1:
        run(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            run(Path(tmp))
