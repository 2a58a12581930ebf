from collections import Counter


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def all_ngrams(tokens, n_max=4):
    counts = Counter()
    for n in range(1, n_max + 1):
        counts.update(ngram_counts(tokens, n))
    return counts
