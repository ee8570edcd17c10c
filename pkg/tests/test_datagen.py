from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcbproto.datagen import SynthSpec, speaker_id, speaker_templates, synth_corpus

SMALL = SynthSpec(num_speakers=4, samples_per_speaker=3, n_mels=16, frames_per_sample=12)


def test_same_spec_is_bitwise_identical():
    a, b = synth_corpus(SMALL), synth_corpus(SMALL)
    for fa, fb in zip(a, b):
        assert fa.speaker_label == fb.speaker_label
        assert fa.values.tobytes() == fb.values.tobytes()


def test_seed_changes_output():
    a = synth_corpus(SMALL)[0].values
    b = synth_corpus(replace(SMALL, seed=1))[0].values
    assert not np.array_equal(a, b)


@settings(max_examples=20, deadline=None)
@given(
    speakers=st.integers(1, 5),
    samples=st.integers(1, 4),
    H=st.integers(1, 20),
    T=st.integers(1, 15),
    templates=st.integers(1, 4),
)
def test_shapes_and_label_coverage(speakers, samples, H, T, templates):
    spec = SynthSpec(speakers, samples, H, T, templates, 0.1, 0)
    corpus = synth_corpus(spec)
    assert all(f.values.shape == (H, T) for f in corpus)
    counts = Counter(f.speaker_label for f in corpus)
    assert counts == {speaker_id(s): samples for s in range(speakers)}


def test_noise_free_samples_differ_only_through_the_walk():
    spec = SynthSpec(num_speakers=3, samples_per_speaker=2, n_mels=20, frames_per_sample=30, noise_sigma=0.0)
    corpus = synth_corpus(spec)
    for s in range(3):
        templates = speaker_templates(spec, s)
        for f in corpus[2 * s : 2 * s + 2]:
            # every frame is a convex combination of two templates: it lies
            # inside the per-bin template envelope
            lo, hi = templates.min(axis=0)[:, None], templates.max(axis=0)[:, None]
            assert (f.values >= lo - 1e-12).all() and (f.values <= hi + 1e-12).all()
    t0, t1 = speaker_templates(spec, 0), speaker_templates(spec, 1)
    assert np.abs(t0[:, None, :] - t1[None, :, :]).sum(axis=-1).min() > 0


def test_first_waypoint_is_a_template_when_noise_free():
    spec = SynthSpec(num_speakers=2, samples_per_speaker=4, n_mels=10, frames_per_sample=9, noise_sigma=0.0)
    corpus = synth_corpus(spec)
    templates = speaker_templates(spec, 1)
    first_frames = [f.values[:, 0] for f in corpus[4:]]
    for frame in first_frames:
        assert min(np.abs(frame - t).max() for t in templates) == 0.0


def test_nearest_template_classifier_separates_speakers():
    spec = SynthSpec(num_speakers=10, samples_per_speaker=20, n_mels=80, frames_per_sample=100, noise_sigma=0.1)
    corpus = synth_corpus(spec)
    templates = np.stack([speaker_templates(spec, s) for s in range(10)])  # (S, K, H)
    correct = 0
    for f in corpus:
        # distance of every frame to its nearest template, per speaker
        d = ((f.values.T[None, None, :, :] - templates[:, :, None, :]) ** 2).sum(-1)  # (S, K, T)
        # walk frames are interpolations, so score by the closest template frames
        score = d.min(axis=1).min(axis=1)
        correct += speaker_id(int(score.argmin())) == f.speaker_label
    assert correct / len(corpus) > 0.99


@pytest.mark.parametrize(
    "kwargs",
    [dict(num_speakers=0), dict(samples_per_speaker=0), dict(n_mels=0), dict(noise_sigma=-0.1), dict(seed=-1)],
)
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)
