PROFILES: dict[str, dict] = {
    # Seconds-scale runs for smoke tests and CI.
    "micro": {
        "model": {"embed_dim": 32, "layers": 1, "heads": 2, "mlp_ratio": 2},
        "train": {"epochs": 1, "batch_size": 32, "max_steps": 150, "checkpoint_every": 100, "log_every": 25},
        "env": {"n_episodes": 40},
        "eval": {"n_trials": 24, "n_chain_trials": 12},
    },
}
