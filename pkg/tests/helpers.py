"""Synthetic data builders shared across test modules."""
import random

from dialogev.corpus import Corpus, DialogueInstance, Utterance

TOPICS = [
    ["coffee", "espresso", "roast", "beans", "brew", "grinder"],
    ["guitar", "chords", "strings", "amp", "pedal", "riff"],
    ["hiking", "trail", "summit", "boots", "ridge", "valley"],
    ["python", "loops", "lists", "classes", "imports", "debugger"],
    ["soccer", "goal", "keeper", "midfield", "striker", "corner"],
    ["baking", "dough", "oven", "yeast", "crust", "flour"],
]

FILLER = [f"word{i}" for i in range(40)]


def make_instance(iid, context_texts, response_text, source_tag=""):
    """Instance with alternating speakers, speaker 1 first."""
    context = [
        Utterance(speaker=1 if i % 2 == 0 else 2, text=text)
        for i, text in enumerate(context_texts)
    ]
    response_speaker = 2 if context[-1].speaker == 1 else 1
    return DialogueInstance(
        id=iid,
        context=context,
        response=Utterance(speaker=response_speaker, text=response_text),
        source_tag=source_tag,
    )


def _sentence(rng, topic, n_words, topic_bias=0.7):
    words = []
    for _ in range(n_words):
        pool = topic if rng.random() < topic_bias else FILLER
        words.append(rng.choice(pool))
    return " ".join(words)


def topic_corpus(n, seed=0, name="synthetic", n_topics=None, max_context_turns=3):
    """Corpus whose instances cluster into token-sharing topics.

    Context and response of one instance draw words from the same topic
    pool, so text similarity between instances correlates with topic
    identity. That gives retrieval something real to find.
    """
    if n_topics is None:
        n_topics = len(TOPICS)
    rng = random.Random(seed)
    instances = []
    for i in range(n):
        topic = TOPICS[rng.randrange(n_topics)]
        turns = rng.randint(1, max_context_turns)
        context = [_sentence(rng, topic, rng.randint(3, 7)) for _ in range(turns)]
        response = _sentence(rng, topic, rng.randint(3, 7))
        instances.append(make_instance(f"{name}-{i:05d}", context, response))
    return Corpus(instances, name=name)


def random_corpus(n, seed=0, name="rand", vocab_size=30, max_context_turns=4):
    """Corpus of uniformly random word salad, no planted structure."""
    rng = random.Random(seed)
    vocab = [f"tok{i}" for i in range(vocab_size)]
    instances = []
    for i in range(n):
        turns = rng.randint(1, max_context_turns)
        context = [
            " ".join(rng.choice(vocab) for _ in range(rng.randint(2, 6)))
            for _ in range(turns)
        ]
        response = " ".join(rng.choice(vocab) for _ in range(rng.randint(2, 6)))
        instances.append(make_instance(f"{name}-{i:05d}", context, response))
    return Corpus(instances, name=name)


def reddit_tree_records():
    """A small reply forest: two roots, one branch, four reply nodes."""
    return [
        {"id": "r1", "parent": None, "text": "Anyone tried the new espresso roast?"},
        {"id": "a", "parent": "r1", "text": "Yes, the beans are great."},
        {"id": "b", "parent": "a", "text": "How do you brew it?"},
        {"id": "c", "parent": "r1", "text": "Not yet, is it dark?"},
        {"id": "r2", "parent": None, "text": "Best trail near the valley?"},
        {"id": "d", "parent": "r2", "text": "The ridge loop, bring boots."},
    ]
