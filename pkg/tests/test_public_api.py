"""Public API tests."""

import socialdiff


def test_public_api_exports_exact_set() -> None:
    """Verify __all__ contains exactly the expected symbols."""
    expected = {
        "Activation",
        "AttentionMode",
        "BaseVariant",
        "CheckpointError",
        "ConfigError",
        "DataError",
        "DiffusionModel",
        "DivergenceError",
        "EvalConfig",
        "ExperimentFlow",
        "ExperimentRecord",
        "HeteroGraph",
        "InvalidTransitionError",
        "ModelConfig",
        "NumericError",
        "ParameterSet",
        "RankingReport",
        "Readout",
        "RunStatus",
        "SocialDiffException",
        "TrainConfig",
        "Variant",
        "VariantNotFoundError",
        "__version__",
        "evaluate",
        "preprocess",
        "registry",
        "split",
        "train",
    }
    assert set(socialdiff.__all__) == expected


def test_all_exports_are_importable() -> None:
    """Every name in __all__ can be accessed as an attribute."""
    for name in socialdiff.__all__:
        assert hasattr(socialdiff, name), (
            f"{name} listed in __all__ but not importable"
        )
