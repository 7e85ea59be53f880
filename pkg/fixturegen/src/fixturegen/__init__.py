from .train import FixtureBundle, TrainingDiverged, train_export

__all__ = ["FixtureBundle", "TrainingDiverged", "train_export"]
