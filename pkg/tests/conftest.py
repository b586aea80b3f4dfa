import numpy as np
import pytest

from grtm.mathkit import Covariance
from grtm.model import Corpus, LinkModel, LinkSet, TopicParams, VariationalState


@pytest.fixture
def tiny():
    """Two users, three images, two topics, one link."""
    images = [
        np.array([[0.3, -0.2], [1.7, 2.1]]),
        np.array([[1.1, 0.4]]),
    ]
    corpus = Corpus(images)
    phi = [
        np.array([[0.8, 0.2], [0.25, 0.75]]),
        np.array([[0.6, 0.4]]),
    ]
    gamma = np.array([[3.05, 2.95], [2.6, 2.4]])
    topics = TopicParams(
        np.array([[0.1, 0.0], [1.5, 1.8]]),
        [Covariance.diagonal([0.9, 1.3]), Covariance.diagonal([0.5, 0.7])],
    )
    link_model = LinkModel(np.array([0.4, -0.3]), -0.8)
    links = LinkSet([(0, 1)])
    return {
        "corpus": corpus,
        "state": VariationalState(phi, gamma),
        "topics": topics,
        "link_model": link_model,
        "links": links,
        "alpha": 2.0,
        "rho": 1.0,
    }
