import numpy as np
import pytest

from signkit.manifest import (DatasetManifest, GlossLabel, SampleRecord,
                              singleton_groups)


def random_manifest(rng: np.random.Generator, n_signers: int, n_glosses: int,
                    max_per_pair: int = 6, language: str = "rsl",
                    ensure_nonempty_gloss: bool = True) -> DatasetManifest:
    """Random manifest with arbitrary (gloss, signer) sample counts."""
    glosses = tuple(GlossLabel(id=f"g{i:03d}", language=language)
                    for i in range(n_glosses))
    signers = tuple(f"s{i:03d}" for i in range(n_signers))
    samples = []
    serial = 0
    for g in glosses:
        counts = rng.integers(0, max_per_pair + 1, size=n_signers)
        if ensure_nonempty_gloss and counts.sum() == 0:
            counts[int(rng.integers(0, n_signers))] = 1
        for s_idx, count in enumerate(counts):
            for _ in range(int(count)):
                video = int(rng.integers(66, 140))
                start = int(rng.integers(0, 20))
                end = int(rng.integers(start + 30, video + 1))
                samples.append(SampleRecord(
                    sample_id=f"v{serial:05d}", signer=signers[s_idx],
                    gloss=g.id, language=language, video_length=video,
                    sign_start=start, sign_end=end))
                serial += 1
    return DatasetManifest(
        language=language, glosses=glosses, groups=singleton_groups(glosses),
        signers=signers, samples=tuple(samples)).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
