import math

SYNTHESIS_CONFIG = {
    'method' : 'steps',
    'L' : 2,
    'allocation' : 'half-split',
    'epsilon' : math.e,
    'm' : 5,
    'seed' : 0,
    'dense_threshold' : 2 ** 24,
    'metrics' : ['specks', 'l1', 'chisq'],
    'alphas' : [0.01, 0.05, 0.10],
    'combination_rule' : 'median',
    'epsilons' : [math.exp(-2), math.exp(-1), 1.0, math.e, math.exp(2)],
    'repetitions' : 24,
}

PROPENSITY_CONFIG = {
    'ridge' : 1e-6,
    'tol' : 1e-8,
    'max_iter' : 100,
    'interactions' : False,
}

MOCK_DATA_CONFIG = {
    'n' : 44821,
    'seed' : 2020,
    'skewed' : True,
}

MLFLOW_EXPERIMENT = "StepsSynthesisExperiment"
