#!/usr/bin/env python3
"""Trains three small tokenizers with the `tokenizers` package and freezes
their encodings of a few probe strings into cases.json."""

import json
import pathlib

from tokenizers import Regex, Tokenizer, decoders, models, normalizers, pre_tokenizers, trainers

HERE = pathlib.Path(__file__).resolve().parent

CORPUS = [
    "The quick brown fox jumps over the lazy dog.",
    "Ram goes home. Mohan reads a book. The farmer drinks water.",
    "राम घर जाता है। किसान पानी पीता है।",
    "Иван читает книгу. Брат ест хлеб.",
    "Der Junge liest ein Buch. Der Arzt trinkt Wasser.",
    "rɑm ɡʱər dʒaːt̪aː ɦɛː. ivan tɕitajet knʲiɡu.",
    "Numbers like 12345 and 3.14 don't split badly, it's fine!",
] * 3

PROBES = [
    "The farmer reads a book.",
    "राम किताब पढ़ता है।",
    "Брат пьёт воду.",
    "ivan tɕitajet, it's 2024!",
    "  spaced   out\ttext\n",
    "",
    "zebra quartz 😀",
]

LLAMA3 = (r"(?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]+[\r\n]*"
          r"|\s*[\r\n]+|\s+(?!\S)|\s+")


def bytelevel_gpt2():
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False, use_regex=True)
    tok.decoder = decoders.ByteLevel()
    return tok, trainers.BpeTrainer(vocab_size=400, initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
                                    show_progress=False)


def bytelevel_llama3():
    tok = Tokenizer(models.BPE())
    tok.normalizer = normalizers.NFC()
    tok.pre_tokenizer = pre_tokenizers.Sequence([
        pre_tokenizers.Split(Regex(LLAMA3), behavior="isolated", invert=False),
        pre_tokenizers.ByteLevel(add_prefix_space=False, use_regex=False),
    ])
    return tok, trainers.BpeTrainer(vocab_size=400, initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
                                    show_progress=False)


def metaspace():
    tok = Tokenizer(models.BPE(unk_token="<unk>"))
    tok.normalizer = normalizers.Sequence([normalizers.NFKC(), normalizers.Lowercase()])
    tok.pre_tokenizer = pre_tokenizers.Metaspace()
    return tok, trainers.BpeTrainer(vocab_size=300, special_tokens=["<unk>"], show_progress=False)


def main():
    cases = {}
    for name, make in [("gpt2", bytelevel_gpt2), ("llama3", bytelevel_llama3), ("metaspace", metaspace)]:
        tok, trainer = make()
        tok.train_from_iterator(CORPUS, trainer)
        tok.save(str(HERE / f"{name}.json"))
        out = []
        for text in PROBES:
            enc = tok.encode(text, add_special_tokens=False)
            out.append({"text": text, "tokens": enc.tokens, "ids": enc.ids})
        cases[name] = out
    (HERE / "cases.json").write_text(json.dumps(cases, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
