from .captioning import all_metrics, bleu, cider_d, meteor_lite, rouge_l, tokenize
from .classify import EmbeddingSet, EpisodeConfig, few_shot_eval, zero_shot_top1
from .retrieval import I2T, T2I, SimilarityMatrix, mean_recall, recall_at_k, retrieval_report
from .stats import caption_stats, similarity_histogram

__all__ = [
    "EmbeddingSet", "EpisodeConfig", "I2T", "SimilarityMatrix", "T2I", "all_metrics", "bleu",
    "caption_stats", "cider_d", "few_shot_eval", "mean_recall", "meteor_lite", "recall_at_k",
    "retrieval_report", "rouge_l", "similarity_histogram", "tokenize", "zero_shot_top1",
]
