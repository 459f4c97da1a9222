"""Human-in-the-loop refinement: veto an edge, retrain, re-extract.

Runs the full pipeline on a mediator motif (X1 -> X2 -> X3), then
pretends a domain expert rejects the strongest extracted edge. The
veto becomes a hard attention mask in a child run: the retrained
forecaster is structurally unable to route information from the
rejected cause to the rejected effect, so the edge cannot reappear.
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np

from causalgrad import (
    ModelConfig,
    MotifConfig,
    PriorKnowledge,
    apply_exclusions,
    gen_motif,
    load_run_gradients,
    load_run_graph,
    run_pipeline,
    save_generated,
)

work = Path(tempfile.mkdtemp(prefix="causalgrad-demo-"))
try:
    dataset, truth = gen_motif(MotifConfig(kind="mediator", seed=3, length=400))
    data_dir = work / "mediator"
    save_generated(dataset, truth, data_dir)

    config = ModelConfig(embed_dim=64, layers_per_level=2, epochs=200, seed=3,
                         train_stride=2)
    parent = run_pipeline(str(data_dir), config, PriorKnowledge(),
                          state_dir=work)
    graph = load_run_graph(work, parent.run_id)
    print(f"run {parent.run_id} extracted:")
    for e in sorted(graph.edges, key=lambda e: -e.score):
        print(f"  {e.cause} -> {e.effect}  lag {e.lag}  score {e.score:.2f}")

    vetoed = max(graph.edges, key=lambda e: e.score)
    print(f"\nexpert veto: {vetoed.cause} -> {vetoed.effect}")

    child = apply_exclusions(parent.run_id, {(vetoed.cause, vetoed.effect)},
                             state_dir=work)
    child_graph = load_run_graph(work, child.run_id)
    print(f"\nrun {child.run_id} (retrained under the veto) extracted:")
    for e in sorted(child_graph.edges, key=lambda e: -e.score):
        print(f"  {e.cause} -> {e.effect}  lag {e.lag}  score {e.score:.2f}")

    grads = load_run_gradients(work, child.run_id)
    gm = next(g for g in grads if g["target"] == vetoed.effect)
    matrix = np.asarray(gm["matrix"])
    col = matrix[:, gm["sources"].index(vetoed.cause)]
    print(f"\nchild gradient column {vetoed.cause} -> {vetoed.effect}: "
          f"max |value| = {abs(col).max():.1e} (exactly zero by construction)")
    assert not any((e.cause, e.effect) == (vetoed.cause, vetoed.effect)
                   for e in child_graph.edges)
finally:
    shutil.rmtree(work, ignore_errors=True)
