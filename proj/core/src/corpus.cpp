#include "evomoe/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "evomoe/error.hpp"
#include "evomoe/random.hpp"

namespace evomoe {

namespace {

// Successors per state in the generated chains.
constexpr std::size_t kBranching = 4;

// Sparse transition table over `states` ids starting at `offset`.
struct MarkovChain {
  std::size_t offset = 0;
  std::size_t states = 0;
  std::vector<std::vector<std::pair<std::int32_t, double>>> next;  // cumulative probs

  static MarkovChain random(std::size_t offset, std::size_t states, Rng& rng) {
    MarkovChain chain;
    chain.offset = offset;
    chain.states = states;
    chain.next.resize(states);
    const std::size_t branch = std::min(kBranching, states);
    std::vector<std::size_t> ids(states);
    for (std::size_t s = 0; s < states; ++s) {
      std::iota(ids.begin(), ids.end(), std::size_t{0});
      // Partial Fisher-Yates for `branch` distinct successors.
      for (std::size_t i = 0; i < branch; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(states - i));
        std::swap(ids[i], ids[std::min(j, states - 1)]);
      }
      std::vector<double> w(branch);
      double total = 0.0;
      for (auto& x : w) {
        x = -std::log(uniform_open01(rng));  // Dirichlet(1) weights
        total += x;
      }
      double cum = 0.0;
      for (std::size_t i = 0; i < branch; ++i) {
        cum += w[i] / total;
        chain.next[s].emplace_back(static_cast<std::int32_t>(offset + ids[i]), cum);
      }
      chain.next[s].back().second = 1.0;
    }
    return chain;
  }

  std::int32_t start(Rng& rng) const {
    const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(states));
    return static_cast<std::int32_t>(offset + std::min(i, states - 1));
  }

  std::int32_t step(std::int32_t token, Rng& rng) const {
    const auto& row = next[static_cast<std::size_t>(token) - offset];
    const double u = uniform01(rng);
    for (const auto& [id, cum] : row)
      if (u < cum) return id;
    return row.back().first;
  }
};

}  // namespace

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train|valid|test)");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

const std::vector<std::int32_t>& Corpus::tokens(Split split) const {
  switch (split) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kTest: return test;
  }
  return train;
}

std::size_t Corpus::documents(Split split) const { return doc_len == 0 ? 0 : tokens(split).size() / doc_len; }

std::span<const std::int32_t> Corpus::document(Split split, std::size_t index) const {
  if (index >= documents(split)) throw ParameterError("document index out of range");
  return std::span<const std::int32_t>(tokens(split)).subspan(index * doc_len, doc_len);
}

std::size_t Corpus::language_of_token(std::int32_t token) const {
  const std::size_t block = vocab / std::max<std::size_t>(sub_languages, 1);
  return static_cast<std::size_t>(token) / block;
}

Corpus make_corpus(CorpusKind kind, std::size_t size, std::size_t vocab, std::uint64_t seed,
                   std::size_t doc_len, std::size_t sub_languages) {
  if (size < 1) throw ParameterError("corpus size must be at least 1");
  if (vocab < 2) throw ParameterError("corpus vocab must be at least 2");
  if (doc_len < 2) throw ParameterError("corpus documents need at least 2 tokens");
  if (kind != CorpusKind::kMixture) sub_languages = 1;
  if (sub_languages < 1 || vocab % sub_languages != 0) {
    throw ParameterError("sub_languages must divide the vocab");
  }

  Corpus c;
  c.kind = kind;
  c.vocab = vocab;
  c.doc_len = doc_len;
  c.sub_languages = sub_languages;

  Rng rng(derive_seed(seed, 0xC0));
  std::vector<MarkovChain> chains;
  const std::size_t block = vocab / sub_languages;
  if (kind != CorpusKind::kCopy) {
    for (std::size_t k = 0; k < sub_languages; ++k) chains.push_back(MarkovChain::random(k * block, block, rng));
  }

  const std::size_t docs = (size + doc_len - 1) / doc_len;
  const std::size_t n_valid = docs * 5 / 100;
  const std::size_t n_test = docs * 5 / 100;
  const std::size_t n_train = docs - n_valid - n_test;

  std::vector<std::int32_t> doc(doc_len);
  for (std::size_t d = 0; d < docs; ++d) {
    std::int32_t lang = 0;
    if (kind == CorpusKind::kCopy) {
      const std::size_t half = (doc_len + 1) / 2;
      for (std::size_t t = 0; t < half; ++t) {
        doc[t] = static_cast<std::int32_t>(
            std::min(vocab - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(vocab))));
      }
      for (std::size_t t = half; t < doc_len; ++t) doc[t] = doc[t - half];
    } else {
      if (sub_languages > 1) {
        lang = static_cast<std::int32_t>(std::min(
            sub_languages - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(sub_languages))));
      }
      const auto& chain = chains[static_cast<std::size_t>(lang)];
      doc[0] = chain.start(rng);
      for (std::size_t t = 1; t < doc_len; ++t) doc[t] = chain.step(doc[t - 1], rng);
    }
    auto& dst = d < n_train ? c.train : (d < n_train + n_valid ? c.valid : c.test);
    auto& langs = d < n_train ? c.train_lang : (d < n_train + n_valid ? c.valid_lang : c.test_lang);
    dst.insert(dst.end(), doc.begin(), doc.end());
    langs.push_back(lang);
  }
  return c;
}

Corpus make_corpus(const ModelConfig& config) {
  return make_corpus(config.corpus, config.corpus_tokens, config.vocab, config.seed, config.seq_len + 1,
                     config.sub_languages);
}

}  // namespace evomoe
