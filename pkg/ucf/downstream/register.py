from ucf.downstream import bayes, common, ensemble, linear, neighbors, trees


def register_all_classifiers() -> None:
    """
    Register all classifier kinds. This is called in main.
    """
    common.register_classifier(linear.LogisticRegression)
    common.register_classifier(linear.LinearSvm)
    common.register_classifier(neighbors.KNearestNeighbors)
    common.register_classifier(bayes.GaussianNaiveBayes)
    common.register_classifier(trees.DecisionTree)
    common.register_classifier(ensemble.RandomForest)
    common.register_classifier(ensemble.GradientBoosting)
