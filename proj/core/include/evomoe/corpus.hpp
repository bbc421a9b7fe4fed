#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "evomoe/config.hpp"

namespace evomoe {

enum class Split { kTrain, kValid, kTest };

Split parse_split(const std::string& name);
std::string to_string(Split split);

// Synthetic token corpus made of fixed-length documents. Each split holds
// whole documents laid out back to back; a training example is one document
// (inputs = doc[0..L), targets = doc[1..L]).
struct Corpus {
  CorpusKind kind = CorpusKind::kMarkov;
  std::size_t vocab = 0;
  std::size_t doc_len = 0;
  std::size_t sub_languages = 1;
  std::vector<std::int32_t> train, valid, test;
  // Sub-language per document (all zero unless kind is mixture).
  std::vector<std::int32_t> train_lang, valid_lang, test_lang;

  const std::vector<std::int32_t>& tokens(Split split) const;
  std::size_t documents(Split split) const;
  std::span<const std::int32_t> document(Split split, std::size_t index) const;
  // Sub-language owning a token id in the mixture corpus (vocab is split into
  // contiguous blocks of vocab / sub_languages ids).
  std::size_t language_of_token(std::int32_t token) const;
};

// Deterministic corpus of about `size` tokens in documents of `doc_len`
// tokens, split 90/5/5 by document.
//  markov:  one sparse random Markov chain over the whole vocab.
//  copy:    documents whose second half repeats the first half.
//  mixture: `sub_languages` distinct chains over disjoint vocab blocks; each
//           document is drawn from one of them.
Corpus make_corpus(CorpusKind kind, std::size_t size, std::size_t vocab, std::uint64_t seed,
                   std::size_t doc_len, std::size_t sub_languages = 4);

Corpus make_corpus(const ModelConfig& config);

}  // namespace evomoe
