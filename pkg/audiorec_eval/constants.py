class ModelKind:
    KNN = 'knn'
    Shallow = 'shallow'
    SeqRec = 'seqrec'

    all = (KNN, Shallow, SeqRec)


class InitMode:
    PretrainedFrozen = 'pretrained-frozen'
    RandomUnfrozen = 'random-unfrozen'

    all = (PretrainedFrozen, RandomUnfrozen)


class Partition:
    Train = 'train'
    Validation = 'validation'
    Test = 'test'

    all = (Train, Validation, Test)


# variant name of the learned-from-scratch baseline (no embedding file behind it)
RANDOM_VARIANT = 'Random'

METRICS = ('hitrate', 'recall', 'ndcg', 'mrr', 'precision')

SECONDS_PER_DAY = 86400
