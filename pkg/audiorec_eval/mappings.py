map_backend_dims = {
    "MFCC": 104,
    "MusiCNN": 200,
    "MusicFM": 750,
    "EncodecMAE": 768,
    "Music2Vec": 768,
    "MERT": 1024,
    "Jukebox": 4800,
}

map_backend_dims_lower = {key.lower(): val for key, val in map_backend_dims.items()}

map_model_labels = {
    "knn": "KNN",
    "shallow": "Shallow Net",
    "seqrec": "BERT4Rec",
}

map_metric_labels = {
    "hitrate": "HitRate@{k}",
    "recall": "Recall@{k}",
    "ndcg": "NDCG@{k}",
    "mrr": "MRR@{k}",
    "precision": "Precision@{k}",
}


def backend_dim(name):
    """Return the embedding size of a known backend model, None if unknown."""
    if name is None:
        return None
    return map_backend_dims_lower.get(str(name).lower())
