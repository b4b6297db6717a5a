"""Active selection and reannotation engine for noisy closed-vocabulary answers.

The package trains a small softmax classifier inside a pool-based active
learning loop.  Each epoch it can (a) move a budgeted batch of the most
informative unlabeled instances into the labeled pool and (b) flag labeled
instances whose prediction is semantically confident yet disagrees with its
annotation, sending them back to an oracle for reannotation.  Uncertainty is
measured in the embedding space of the answer vocabulary rather than over raw
class indices.

Modules
-------
corpus       answer vocabulary, embeddings, canonical refinement and the
             surface-matching rule pipeline
uncertainty  weighted semantic moments, regularized log-determinant, the
             divergence gap (two independent routes), entropy and BALD
learner      zero-initialized softmax-linear classifier with deterministic
             minibatch SGD and bootstrap ensembles
pools        dataset state machine (unlabeled / labeled / reannotation queue)
policy       selection strategies, budget schedules, Z-score filtration
oracle       annotation noise model, reannotation oracles, synthetic data
loop         the epoch loop plus evaluation metrics
cli          command-line entry points (run / compare / serve / gen)
service      HTTP API exposing run status and the reannotation queue
"""

__version__ = "0.1.0"

from . import corpus, learner, loop, oracle, policy, pools, uncertainty

__all__ = [
    "corpus",
    "learner",
    "loop",
    "oracle",
    "policy",
    "pools",
    "uncertainty",
    "__version__",
]
