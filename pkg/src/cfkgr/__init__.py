"""Counterfactual reasoning benchmarks over knowledge graph embeddings."""
from .kg import KnowledgeGraph, Triple, load_kg, load_kg_dir
from .models import EmbeddingModel, ModelConfig, init_model, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

__all__ = ["KnowledgeGraph", "Triple", "load_kg", "load_kg_dir", "EmbeddingModel", "ModelConfig",
           "init_model", "load_checkpoint", "save_checkpoint", "TrainConfig", "train"]
__version__ = "0.1.0"
