#include "talecraft/layout/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "talecraft/common/error.hpp"

namespace talecraft::layout {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

struct Word {
    std::size_t begin;
    std::size_t end;
    std::string text;  // lower-case
    bool boundary_after;  // punctuation follows before the next word
};

std::vector<Word> tokenize(const std::string& text) {
    std::vector<Word> words;
    std::size_t i = 0;
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (c == '<') {  // learned tokens such as <sks> are not words
            auto close = text.find('>', i);
            i = close == std::string::npos ? text.size() : close + 1;
            continue;
        }
        if (std::isalpha(c)) {
            std::size_t j = i;
            while (j < text.size() && (std::isalpha(static_cast<unsigned char>(text[j])) || text[j] == '-' ||
                                       text[j] == '\'')) {
                ++j;
            }
            words.push_back({i, j, lower(text.substr(i, j - i)), false});
            i = j;
            continue;
        }
        if (!std::isspace(c) && !words.empty()) {
            words.back().boundary_after = true;
        }
        ++i;
    }
    return words;
}

const std::unordered_map<std::string, int>& number_words() {
    static const std::unordered_map<std::string, int> m = {
        {"a", 1},   {"an", 1},    {"one", 1},   {"two", 2},   {"three", 3}, {"four", 4},  {"five", 5},
        {"six", 6}, {"seven", 7}, {"eight", 8}, {"nine", 9},  {"ten", 10},  {"pair", 2}, {"couple", 2}};
    return m;
}

const std::set<std::string>& determiners() {
    static const std::set<std::string> s = {
        "a",     "an",    "the",  "one",  "two",   "three",  "four",    "five",  "six",   "seven", "eight",
        "nine",  "ten",   "some", "many", "his",   "her",    "their",   "its",   "my",    "our",   "your",
        "this",  "that",  "these", "those", "several", "another", "each", "every", "few", "no"};
    return s;
}

// Words that end a determiner phrase: prepositions, conjunctions, auxiliaries
// and common verbs.
const std::set<std::string>& phrase_breaks() {
    static const std::set<std::string> s = {
        "in",     "on",      "at",      "of",      "with",    "under",  "over",    "near",    "by",
        "from",   "to",      "into",    "onto",    "behind",  "beside", "across",  "through", "around",
        "among",  "between", "above",   "below",   "for",     "during", "inside",  "outside", "along",
        "and",    "or",      "but",     "while",   "as",      "then",   "that",    "which",   "who",
        "is",     "are",     "was",     "were",    "be",      "been",   "has",     "have",    "had",
        "do",     "does",    "did",     "play",    "plays",   "run",    "runs",    "sit",     "sits",
        "stand",  "stands",  "walk",    "walks",   "look",    "looks",  "see",     "sees",    "find",
        "finds",  "meet",    "meets",   "eat",     "eats",    "fly",    "flies",   "jump",    "jumps",
        "sleep",  "sleeps",  "chase",   "chases",  "hold",    "holds",  "ride",    "rides",   "swim",
        "swims",  "go",      "goes",    "come",    "comes",   "get",    "gets",    "make",    "makes",
        "take",   "takes",   "give",    "gives",   "wear",    "wears",  "enjoy",   "enjoys",  "lie",
        "lies",   "climb",   "climbs",  "read",    "reads",   "sing",   "sings",   "dance",   "dances",
        "together", "there", "here",    "very",    "too",     "also",   "not"};
    return s;
}

const std::unordered_map<std::string, std::string>& irregular_plurals() {
    static const std::unordered_map<std::string, std::string> m = {
        {"people", "person"}, {"men", "man"},       {"women", "woman"},   {"children", "child"},
        {"mice", "mouse"},    {"geese", "goose"},   {"teeth", "tooth"},   {"feet", "foot"},
        {"knives", "knife"},  {"wolves", "wolf"},   {"leaves", "leaf"},   {"sheep", "sheep"},
        {"fish", "fish"},     {"deer", "deer"},     {"oxen", "ox"},       {"shelves", "shelf"},
        {"scissors", "scissors"}, {"glasses", "glasses"}, {"binoculars", "binoculars"}, {"chips", "chips"},
        {"nuts", "nuts"},     {"cookies", "cookie"}, {"ponies", "pony"},  {"bunnies", "bunny"},
        {"puppies", "puppy"}, {"kitties", "kitty"}, {"ladies", "lady"},   {"babies", "baby"}};
    return m;
}

}  // namespace

int category_id(const std::string& class_name) {
    const auto& classes = object365_classes();
    auto it = std::find(classes.begin(), classes.end(), class_name);
    return it == classes.end() ? 0 : static_cast<int>(it - classes.begin()) + 1;
}

std::string singular(const std::string& word) {
    auto w = lower(word);
    if (auto it = irregular_plurals().find(w); it != irregular_plurals().end()) return it->second;
    if (w.size() > 4 && w.ends_with("ies")) return w.substr(0, w.size() - 3) + "y";
    if (w.size() > 4 && w.ends_with("ves")) return w.substr(0, w.size() - 3) + "f";
    if (w.size() > 3 && w.ends_with("es")) {
        auto stem = w.substr(0, w.size() - 2);
        if (stem.ends_with("s") || stem.ends_with("x") || stem.ends_with("z") || stem.ends_with("ch") ||
            stem.ends_with("sh") || stem.ends_with("o")) {
            return stem;
        }
    }
    if (w.size() > 3 && w.ends_with("s") && !w.ends_with("ss") && !w.ends_with("us")) {
        return w.substr(0, w.size() - 1);
    }
    return w;
}

void Lexicon::add(const std::string& noun, int category) {
    if (category < 1 || category > static_cast<int>(object365_classes().size())) {
        throw ConfigError("lexicon entry '" + noun + "' has invalid category " + std::to_string(category));
    }
    auto key = lower(noun);
    entries_[key] = category;
    int words = 1 + static_cast<int>(std::count(key.begin(), key.end(), ' '));
    max_words_ = std::max(max_words_, words);
}

std::optional<int> Lexicon::lookup(const std::string& noun) const {
    auto key = lower(noun);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    // Fold the plural on the last word only ("traffic lights").
    auto space = key.rfind(' ');
    auto head = space == std::string::npos ? key : key.substr(space + 1);
    auto folded = (space == std::string::npos ? std::string() : key.substr(0, space + 1)) + singular(head);
    if (auto it = entries_.find(folded); it != entries_.end()) return it->second;
    return std::nullopt;
}

Lexicon Lexicon::builtin() {
    static const std::vector<std::pair<const char*, const char*>> table = {
        // people
        {"person", "Person"}, {"man", "Person"}, {"woman", "Person"}, {"boy", "Person"}, {"girl", "Person"},
        {"child", "Person"}, {"kid", "Person"}, {"baby", "Person"}, {"lady", "Person"}, {"gentleman", "Person"},
        {"guy", "Person"}, {"king", "Person"}, {"queen", "Person"}, {"prince", "Person"},
        {"princess", "Person"}, {"farmer", "Person"}, {"teacher", "Person"}, {"student", "Person"},
        {"knight", "Person"}, {"wizard", "Person"}, {"witch", "Person"}, {"pirate", "Person"},
        {"soldier", "Person"}, {"doctor", "Person"}, {"fisherman", "Person"}, {"hunter", "Person"},
        {"friend", "Person"}, {"mother", "Person"}, {"father", "Person"}, {"grandmother", "Person"},
        {"grandfather", "Person"}, {"sister", "Person"}, {"brother", "Person"}, {"chef", "Person"},
        // animals
        {"dog", "Dog"}, {"puppy", "Dog"}, {"hound", "Dog"}, {"cat", "Cat"}, {"kitten", "Cat"},
        {"kitty", "Cat"}, {"horse", "Horse"}, {"pony", "Horse"}, {"cow", "Cow"}, {"bull", "Cow"},
        {"calf", "Cow"}, {"sheep", "Sheep"}, {"lamb", "Sheep"}, {"pig", "Pig"}, {"piglet", "Pig"},
        {"elephant", "Elephant"}, {"giraffe", "Giraffe"}, {"zebra", "Zebra"}, {"bear", "Bear"},
        {"lion", "Lion"}, {"monkey", "Monkey"}, {"rabbit", "Rabbit"}, {"bunny", "Rabbit"}, {"deer", "Deer"},
        {"duck", "Duck"}, {"goose", "Goose"}, {"swan", "Swan"}, {"penguin", "Penguin"}, {"parrot", "Parrot"},
        {"pigeon", "Pigeon"}, {"dove", "Pigeon"}, {"chicken", "Chicken"}, {"hen", "Chicken"},
        {"rooster", "Chicken"}, {"bird", "Wild Bird"}, {"owl", "Wild Bird"}, {"eagle", "Wild Bird"},
        {"sparrow", "Wild Bird"}, {"fish", "Other Fish"}, {"goldfish", "Goldfish"}, {"dolphin", "Dolphin"},
        {"seal", "Seal"}, {"crab", "Crab"}, {"lobster", "Lobster"}, {"shrimp", "Shrimp"},
        {"butterfly", "Butterfly"}, {"camel", "Camel"}, {"donkey", "Donkey"}, {"yak", "Yak"},
        {"antelope", "Antelope"}, {"jellyfish", "Jellyfish"}, {"mouse", "Mouse"},
        // vehicles
        {"car", "Car"}, {"automobile", "Car"}, {"taxi", "Car"}, {"truck", "Truck"}, {"lorry", "Truck"},
        {"bus", "Bus"}, {"van", "Van"}, {"train", "Train"}, {"boat", "Boat"}, {"canoe", "Boat"},
        {"ship", "Ship"}, {"sailboat", "Sailboat"}, {"airplane", "Airplane"}, {"plane", "Airplane"},
        {"aeroplane", "Airplane"}, {"helicopter", "Helicopter"}, {"bicycle", "Bicycle"}, {"bike", "Bicycle"},
        {"motorcycle", "Motorcycle"}, {"motorbike", "Motorcycle"}, {"scooter", "Scooter"},
        {"tricycle", "Tricycle"}, {"skateboard", "Skateboard"}, {"surfboard", "Surfboard"},
        {"carriage", "Carriage"}, {"ambulance", "Ambulance"}, {"tractor", "Machinery Vehicle"},
        {"fire truck", "Fire Truck"}, {"sports car", "Sports Car"}, {"hot-air balloon", "Hot-air balloon"},
        // furniture and household
        {"chair", "Chair"}, {"bench", "Bench"}, {"couch", "Couch"}, {"sofa", "Couch"}, {"bed", "Bed"},
        {"desk", "Desk"}, {"table", "Dinning Table"}, {"stool", "Stool"}, {"lamp", "Lamp"},
        {"clock", "Clock"}, {"mirror", "Mirror"}, {"carpet", "Carpet"}, {"rug", "Carpet"},
        {"pillow", "Pillow"}, {"cushion", "Pillow"}, {"cabinet", "Cabinet/shelf"}, {"shelf", "Cabinet/shelf"},
        {"bookshelf", "Cabinet/shelf"}, {"tv", "Monitor/TV"}, {"television", "Monitor/TV"},
        {"monitor", "Monitor/TV"}, {"laptop", "Laptop"}, {"computer", "Laptop"}, {"keyboard", "Keyboard"},
        {"phone", "Cell Phone"}, {"smartphone", "Cell Phone"}, {"telephone", "Telephone"}, {"camera", "Camera"},
        {"piano", "Piano"}, {"guitar", "Guitar"}, {"violin", "Violin"}, {"drum", "Drum"},
        {"trumpet", "Trumpet"}, {"flute", "Flute"}, {"cello", "Cello"}, {"saxophone", "Saxophone"},
        {"book", "Book"}, {"umbrella", "Umbrella"}, {"backpack", "Backpack"}, {"bag", "Handbag/Satchel"},
        {"handbag", "Handbag/Satchel"}, {"purse", "Wallet/Purse"}, {"wallet", "Wallet/Purse"},
        {"suitcase", "Luggage"}, {"luggage", "Luggage"}, {"hat", "Hat"}, {"cap", "Hat"}, {"helmet", "Helmet"},
        {"glasses", "Glasses"}, {"tie", "Tie"}, {"boot", "Boots"}, {"shoe", "Other Shoes"},
        {"sneaker", "Sneakers"}, {"sandal", "Sandals"}, {"flag", "Flag"}, {"kite", "Kite"},
        {"balloon", "Balloon"}, {"tent", "Tent"}, {"ladder", "Ladder"}, {"swing", "Swing"}, {"slide", "Slide"},
        {"basket", "Basket"}, {"bucket", "Barrel/bucket"}, {"barrel", "Barrel/bucket"}, {"vase", "Vase"},
        {"flower", "Flower"}, {"rose", "Flower"}, {"tulip", "Flower"}, {"plant", "Potted Plant"},
        {"cup", "Cup"}, {"mug", "Cup"}, {"bottle", "Bottle"}, {"bowl", "Bowl/Basin"}, {"plate", "Plate"},
        {"knife", "Knife"}, {"fork", "Fork"}, {"spoon", "Spoon"}, {"pot", "Pot"}, {"kettle", "Kettle"},
        {"teapot", "Tea pot"}, {"candle", "Candle"}, {"lantern", "Lantern"}, {"key", "Key"}, {"ring", "Ring"},
        {"necklace", "Necklace"}, {"watch", "Watch"}, {"towel", "Towel"}, {"toothbrush", "Toothbrush"},
        {"scissors", "Scissors"}, {"hammer", "Hammer"}, {"broom", "Broom"}, {"mop", "Mop"},
        {"shovel", "Shovel"}, {"fan", "Fan"}, {"globe", "Globe"}, {"trophy", "Trophy"}, {"medal", "Medal"},
        {"toy", "Stuffed Toy"}, {"teddy bear", "Stuffed Toy"}, {"doll", "Stuffed Toy"}, {"binoculars", "Binoculars"},
        {"refrigerator", "Refrigerator"}, {"fridge", "Refrigerator"}, {"oven", "Oven"},
        {"microwave", "Microwave"}, {"sink", "Sink"}, {"toilet", "Toilet"}, {"bathtub", "Bathtub"},
        {"wheelchair", "Wheelchair"}, {"stroller", "Stroller"}, {"briefcase", "Briefcase"},
        {"fire hydrant", "Fire Hydrant"}, {"traffic light", "Traffic Light"}, {"stop sign", "Stop Sign"},
        {"street light", "Street Lights"}, {"cell phone", "Cell Phone"}, {"wine glass", "Wine Glass"},
        {"potted plant", "Potted Plant"}, {"picture", "Picture/Frame"}, {"frame", "Picture/Frame"},
        // food
        {"apple", "Apple"}, {"banana", "Banana"}, {"orange", "Orange/Tangerine"}, {"lemon", "Lemon"},
        {"strawberry", "Strawberry"}, {"grape", "Grape"}, {"watermelon", "Watermelon"}, {"peach", "Peach"},
        {"pear", "Pear"}, {"cherry", "Cherry"}, {"mango", "Mango"}, {"pineapple", "Pineapple"},
        {"bread", "Bread"}, {"cake", "Cake"}, {"pizza", "Pizza"}, {"donut", "Donut"}, {"doughnut", "Donut"},
        {"cookie", "Cookies"}, {"pie", "Pie"}, {"sandwich", "Sandwich"}, {"hamburger", "Hamburger"},
        {"burger", "Hamburger"}, {"hot dog", "Hot dog"}, {"egg", "Egg"}, {"cheese", "Cheese"},
        {"carrot", "Carrot"}, {"tomato", "Tomato"}, {"potato", "Potato"}, {"pumpkin", "Pumpkin"},
        {"corn", "Corn"}, {"broccoli", "Broccoli"}, {"cabbage", "Cabbage"}, {"mushroom", "Mushroom"},
        {"ice cream", "Ice cream"}, {"candy", "Candy"},
        // balls and sport
        {"ball", "Other Balls"}, {"soccer ball", "Soccer"}, {"football", "American Football"},
        {"basketball", "Basketball"}, {"baseball", "Baseball"}, {"volleyball", "Volleyball"},
        {"tennis ball", "Tennis"}, {"frisbee", "Frisbee"}, {"racket", "Tennis Racket"},
    };
    Lexicon lex;
    for (const auto& [noun, cls] : table) {
        const int id = category_id(cls);
        if (id == 0) {
            throw std::logic_error(std::string("built-in lexicon names unknown class ") + cls);
        }
        lex.add(noun, id);
    }
    return lex;
}

std::vector<NounSpan> HeuristicNounTagger::nouns(const std::string& text, const Lexicon& lexicon) const {
    const auto words = tokenize(text);
    std::vector<bool> used(words.size(), false);
    std::vector<NounSpan> spans;

    auto quantity_before = [&](std::size_t first) {
        // Walk back over at most two modifiers to find a number word.
        for (std::size_t back = 1; back <= 3 && back <= first; ++back) {
            const auto& w = words[first - back];
            if (auto it = number_words().find(w.text); it != number_words().end()) return it->second;
            if (phrase_breaks().count(w.text) || w.boundary_after) break;
        }
        return 1;
    };

    // Lexicon matches, longest first.
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (used[i]) continue;
        for (int n = std::min<int>(lexicon.max_words(), static_cast<int>(words.size() - i)); n >= 1; --n) {
            std::string phrase;
            bool crosses = false;
            for (int k = 0; k < n; ++k) {
                if (k > 0) phrase += ' ';
                phrase += words[i + static_cast<std::size_t>(k)].text;
                if (k + 1 < n && words[i + static_cast<std::size_t>(k)].boundary_after) crosses = true;
            }
            if (crosses || !lexicon.lookup(phrase)) continue;
            const auto last = i + static_cast<std::size_t>(n) - 1;
            spans.push_back({words[i].begin, words[last].end, phrase, quantity_before(i)});
            for (std::size_t k = i; k <= last; ++k) used[k] = true;
            break;
        }
    }

    // Heads of determiner phrases that the lexicon does not know.
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (!determiners().count(words[i].text) || words[i].boundary_after) continue;
        std::size_t j = i + 1;
        std::vector<std::size_t> run;
        while (j < words.size() && !phrase_breaks().count(words[j].text) && !determiners().count(words[j].text)) {
            run.push_back(j);
            if (words[j].boundary_after) break;
            ++j;
        }
        if (run.empty()) continue;
        std::size_t head = run.back();
        for (auto it = run.rbegin(); it != run.rend(); ++it) {
            const auto& w = words[*it].text;
            bool verbish = (w.ends_with("ing") || w.ends_with("ly")) && run.size() > 1 && *it != run.front();
            if (!verbish) {
                head = *it;
                break;
            }
        }
        bool covered = std::any_of(run.begin(), run.end(), [&](std::size_t k) { return used[k]; });
        if (covered) continue;
        used[head] = true;
        spans.push_back({words[head].begin, words[head].end, words[head].text, quantity_before(run.front())});
    }

    std::sort(spans.begin(), spans.end(), [](const NounSpan& a, const NounSpan& b) { return a.begin < b.begin; });
    return spans;
}

std::vector<int> CategoryExtraction::ids() const {
    std::vector<int> out;
    out.reserve(categories.size());
    for (const auto& c : categories) out.push_back(c.category);
    return out;
}

CategoryExtraction extract_categories(const std::string& prompt, const Lexicon& lexicon, bool keep_multiplicity,
                                      const NounTagger* tagger) {
    static const HeuristicNounTagger default_tagger;
    const NounTagger& t = tagger ? *tagger : default_tagger;
    CategoryExtraction out;
    std::set<int> seen;
    std::set<std::string> unmapped_seen;
    const auto& classes = object365_classes();
    for (const auto& span : t.nouns(prompt, lexicon)) {
        auto id = lexicon.lookup(span.text);
        if (!id) {
            if (unmapped_seen.insert(span.text).second) {
                out.unmapped.push_back(span.text);
            }
            continue;
        }
        if (keep_multiplicity) {
            for (int q = 0; q < std::max(1, span.quantity); ++q) {
                out.categories.push_back({*id, classes[static_cast<std::size_t>(*id - 1)], span});
            }
        } else if (seen.insert(*id).second) {
            out.categories.push_back({*id, classes[static_cast<std::size_t>(*id - 1)], span});
        }
    }
    if (out.categories.empty()) {
        out.warnings.push_back("no known object nouns in prompt: \"" + prompt + "\"");
    }
    for (const auto& u : out.unmapped) {
        out.warnings.push_back("noun '" + u + "' has no layout category");
    }
    return out;
}

}  // namespace talecraft::layout
