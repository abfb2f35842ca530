"""Deterministic synthetic biomedical world for tests, demos and acceptance runs.

Entity names are coined from syllables so no licensed vocabulary is needed.
Disease, chemical and species names come in *families* sharing a root
(``kamilitis``, ``kamilosis``, ...), which the character n-gram encoder
places close together. Corpus splits draw different family members, so dev
mentions are words the tagger never saw in training sentences but which
knowledge-base retrieval from training sentences does surface.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corpus import B, I, O, LabeledSentence, write_conll
from .knowledge import KBEntry, KnowledgeBase, write_kb

TYPES = ("Disease", "Chemical", "Gene", "Species")
FIXTURE_KB_RESOURCE = "fixture-kb-v1.tsv"

_ONSETS = ["b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v",
           "z", "br", "ch", "dr", "gl", "kr", "pl", "qu", "st", "tr", "th", "sk", "fl"]
_VOWELS = ["a", "e", "i", "o", "u", "ae", "ou", "y"]
_CODAS = ["", "", "", "n", "l", "r", "m", "s", "x"]

_DISEASE_SUFFIXES = ["itis", "osis", "emia", "oma", "uria", "ism", "algia", "ectasia"]
_DISEASE_MODIFIERS = ["acute", "chronic", "familial", "congenital", "juvenile", "hereditary",
                      "idiopathic", "progressive"]
_CHEMICAL_SUFFIXES = ["ine", "ol", "ide", "ate", "one", "il", "ane", "in"]
_GENUS_SUFFIXES = ["us", "ella", "omyces", "ia", "ops"]
_EPITHET_SUFFIXES = ["ensis", "ii", "ata", "icus", "oides", "ina"]

# context frames: X/Y slots are filled by any entity type, D only by diseases
_FRAMES = [
    "the association between {X} and {Y} was examined in this cohort .",
    "we report a case of {X} following exposure to {Y} .",
    "levels of {X} were elevated in samples with {Y} .",
    "{X} and {Y} were observed in the same patients .",
    "no link between {X} and {Y} could be established .",
    "expression of {X} correlated with {Y} in vitro .",
    "patients presenting with {D} received {X} for two weeks .",
    "{D} is a rare condition , often misdiagnosed .",
    "treatment of {D} with {X} improved outcomes .",
    "in {X} , {Y} was detected by sequencing .",
    "the incidence of {D} increased over the study period .",
    "a mutation in {X} was found in a family with {Y} .",
]


def _root(rng: random.Random, syllables: int) -> str:
    return "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS)
                   for _ in range(syllables))


@dataclass
class Family:
    entity_type: str
    members: list[str]


@dataclass
class World:
    families: dict[str, list[Family]] = field(default_factory=dict)
    genes: list[str] = field(default_factory=list)
    kb: KnowledgeBase = field(default_factory=KnowledgeBase)


def _unique_root(rng, used, syllables=(2, 3)):
    while True:
        r = _root(rng, rng.choice(syllables))
        if len(r) >= 4 and r not in used:
            used.add(r)
            return r


def build_world(seed: int = 13, per_type: int = 2500) -> World:
    """Families of coined names and a KB of ``4 * per_type`` entries."""
    rng = random.Random(seed)
    used: set[str] = set()
    world = World()
    names: dict[str, list[str]] = {t: [] for t in TYPES}
    seen: set[str] = set()

    def add(t, name):
        if name in seen or len(names[t]) >= per_type:
            return False
        seen.add(name)
        names[t].append(name)
        return True

    fams: dict[str, list[Family]] = {"Disease": [], "Chemical": [], "Species": []}
    while len(names["Disease"]) < per_type:
        root = _unique_root(rng, used, (3,))
        sufs = rng.sample(_DISEASE_SUFFIXES, 5)
        members = [root + s for s in sufs[:4]]
        if rng.random() < 0.3:
            members.append(rng.choice(_DISEASE_MODIFIERS) + " " + root + sufs[4])
        members = [m for m in members if add("Disease", m)]
        if members:
            fams["Disease"].append(Family("Disease", members))
    while len(names["Chemical"]) < per_type:
        root = _unique_root(rng, used, (3,))
        members = [root + s for s in rng.sample(_CHEMICAL_SUFFIXES, 4)]
        members = [m for m in members if add("Chemical", m)]
        if members:
            fams["Chemical"].append(Family("Chemical", members))
    while len(names["Species"]) < per_type:
        genus = _unique_root(rng, used).capitalize() + rng.choice(_GENUS_SUFFIXES)
        members = [f"{genus} {_root(rng, 2)}{rng.choice(_EPITHET_SUFFIXES)}" for _ in range(4)]
        members = [m for m in members if add("Species", m)]
        if members:
            fams["Species"].append(Family("Species", members))
    letters = "ABCDEFGHKLMNPRSTVWXZ"
    while len(names["Gene"]) < per_type:
        sym = "".join(rng.choice(letters) for _ in range(rng.choice((3, 4))))
        add("Gene", sym + str(rng.randint(1, 30)))

    world.families = fams
    world.genes = names["Gene"]
    # interleave types so any prefix of the file is mixed
    for i in range(per_type):
        for t in TYPES:
            world.kb.append(KBEntry(names[t][i], t))
    return world


@dataclass
class CorpusSplits:
    train: list[LabeledSentence]
    dev: list[LabeledSentence]
    test: list[LabeledSentence]


def _mention_pools(world: World, rng: random.Random, n_families: int):
    """Per type: (train names, held-out names) drawn from disjoint family members."""
    pools = {}
    for t in ("Disease", "Chemical", "Species"):
        fams = list(world.families[t])
        rng.shuffle(fams)
        train, held = [], []
        for fam in fams[:n_families]:
            members = list(fam.members)
            rng.shuffle(members)
            cut = max(1, (len(members) + 1) // 2)
            train += members[:cut]
            held += members[cut:] or members[:1]
        pools[t] = (train, held)
    genes = list(world.genes)
    rng.shuffle(genes)
    g = genes[: 2 * n_families]
    pools["Gene"] = (g[:n_families], g[n_families:])
    return pools


def _render(frame: str, fill: dict[str, tuple[str, str]], target: str) -> LabeledSentence:
    tokens, tags = [], []
    for word in frame.split():
        if word.startswith("{") and word.endswith("}"):
            name, etype = fill[word[1:-1]]
            parts = name.split()
            tokens += parts
            if etype == target:
                tags += [B] + [I] * (len(parts) - 1)
            else:
                tags += [O] * len(parts)
        else:
            tokens.append(word)
            tags.append(O)
    return LabeledSentence(tokens, tags)


def generate_corpus(world: World, target: str = "Disease", n_train: int = 500,
                    n_dev: int = 150, n_test: int = 150, seed: int = 0,
                    n_families: int = 150, source: str = "") -> CorpusSplits:
    """Single-type corpus whose dev/test mentions are held-out family members."""
    rng = random.Random(seed)
    pools = _mention_pools(world, rng, n_families)

    def make(n: int, which: int) -> list[LabeledSentence]:
        out = []
        for _ in range(n):
            frame = rng.choice(_FRAMES)
            fill = {}
            for slot in ("X", "Y"):
                t = rng.choice(TYPES) if rng.random() < 0.6 else target
                fill[slot] = (rng.choice(pools[t][which]), t)
            fill["D"] = (rng.choice(pools[target][which]), target)
            s = _render(frame, fill, target)
            out.append(LabeledSentence(s.tokens, s.tags, source))
        return out

    return CorpusSplits(make(n_train, 0), make(n_dev, 1), make(n_test, 1))


_SEP_FRAMES = [
    "{D} was diagnosed in the patient .",
    "we studied {D} in mice .",
    "the cohort had no history of {D} .",
    "symptoms of {D} resolved quickly .",
    "a new therapy for {D} was tested .",
]


def separable_corpus(world: World, n: int = 30, target: str = "Disease",
                     source: str = "SEP") -> list[LabeledSentence]:
    """Small corpus where every (word, previous word) pair fixes its tag."""
    fams = world.families[target][:n]
    out = []
    for i in range(n):
        frame = _SEP_FRAMES[i % len(_SEP_FRAMES)]
        name = fams[i].members[0]
        s = _render(frame, {"D": (name, target)}, target)
        out.append(LabeledSentence(s.tokens, s.tags, source))
    return out


def fixture_kb(seed: int = 13) -> KnowledgeBase:
    return build_world(seed).kb


def load_fixture_kb() -> KnowledgeBase:
    from importlib import resources

    from .knowledge import load_kb

    with resources.as_file(
        resources.files("instructner.resources").joinpath(FIXTURE_KB_RESOURCE)
    ) as p:
        return load_kb(p)


def write_fixture_world(out_dir, seed: int = 13, n_train: int = 500, n_dev: int = 150,
                        n_test: int = 150) -> Path:
    """Write kb.tsv, two single-type corpora and registry.yaml; return the registry path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(seed)
    write_kb(out / "kb.tsv", world.kb)
    registry = {"datasets": {}}
    for k, (name, etype) in enumerate((("FIXDIS", "Disease"), ("FIXCHEM", "Chemical"))):
        splits = generate_corpus(world, etype, n_train, n_dev, n_test, seed=seed + k + 1,
                                 source=name)
        d = out / name.lower()
        d.mkdir(exist_ok=True)
        entry = {"entity_type": etype}
        for split in ("train", "dev", "test"):
            write_conll(d / f"{split}.conll", getattr(splits, split))
            entry[split] = f"{name.lower()}/{split}.conll"
        registry["datasets"][name] = entry
    reg = out / "registry.yaml"
    reg.write_text(yaml.safe_dump(registry, sort_keys=False), encoding="utf-8")
    return reg
