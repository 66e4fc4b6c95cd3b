#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace talecraft::layout {

/// The 365 Objects365 class names; category id c is element c - 1.
const std::vector<std::string>& object365_classes();

/// 1-based id of a class name, or 0 when unknown. Case-sensitive.
int category_id(const std::string& class_name);

/// Maps nouns (and short noun phrases) to category ids. Lookups fold plurals.
class Lexicon {
public:
    /// About 220 everyday nouns and synonyms mapped onto Objects365 classes.
    static Lexicon builtin();

    void add(const std::string& noun, int category);
    std::optional<int> lookup(const std::string& noun) const;
    std::size_t size() const noexcept { return entries_.size(); }
    /// Longest entry, in words.
    int max_words() const noexcept { return max_words_; }

private:
    std::map<std::string, int> entries_;
    int max_words_ = 1;
};

/// Lower-cases and strips regular and common irregular plural endings.
std::string singular(const std::string& word);

struct NounSpan {
    std::size_t begin = 0;  // byte offsets into the prompt
    std::size_t end = 0;
    std::string text;       // lower-cased surface form
    int quantity = 1;
};

/// Finds noun spans in a prompt. The built-in tagger is heuristic; a real
/// part-of-speech tagger can be plugged in here.
class NounTagger {
public:
    virtual ~NounTagger() = default;
    virtual std::vector<NounSpan> nouns(const std::string& text, const Lexicon& lexicon) const = 0;
};

/// Lexicon matches (longest first) plus heads of determiner phrases
/// ("a wonderful day" -> "day").
class HeuristicNounTagger final : public NounTagger {
public:
    std::vector<NounSpan> nouns(const std::string& text, const Lexicon& lexicon) const override;
};

struct CategoryMention {
    int category = 0;
    std::string name;
    NounSpan span;
};

struct CategoryExtraction {
    std::vector<CategoryMention> categories;  // in order of first mention
    std::vector<std::string> unmapped;        // nouns with no category
    std::vector<std::string> warnings;

    std::vector<int> ids() const;
};

/// Nouns -> ordered categories. Duplicates collapse to one object unless
/// `keep_multiplicity`, which emits one object per counted occurrence.
CategoryExtraction extract_categories(const std::string& prompt, const Lexicon& lexicon,
                                      bool keep_multiplicity = false, const NounTagger* tagger = nullptr);

}  // namespace talecraft::layout
