#pragma once

// Visual summaries: attribute classification over face patches (through a
// pluggable classifier) and the fixed sentence templates.

#include <accessguard/error.hpp>
#include <accessguard/face_geometry.hpp>
#include <accessguard/image.hpp>

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace accessguard::summary {

enum class AttributeLabel {
    Cellphone,
    Gun,
    Eyeglass,
    EyesWithoutGlass,
    Beard,
    NonBeard,
    Mustache,
    NonMustache,
    BaldHead,
    NonBaldHead,
};

inline constexpr std::array kAllLabels = {
    AttributeLabel::Cellphone, AttributeLabel::Gun,      AttributeLabel::Eyeglass,    AttributeLabel::EyesWithoutGlass,
    AttributeLabel::Beard,     AttributeLabel::NonBeard, AttributeLabel::Mustache,    AttributeLabel::NonMustache,
    AttributeLabel::BaldHead,  AttributeLabel::NonBaldHead,
};

using AttributeSet = std::set<AttributeLabel>;

inline std::string_view to_string(AttributeLabel a)
{
    switch (a) {
    case AttributeLabel::Cellphone: return "cellphone";
    case AttributeLabel::Gun: return "gun";
    case AttributeLabel::Eyeglass: return "eyeglass";
    case AttributeLabel::EyesWithoutGlass: return "eyes_without_glass";
    case AttributeLabel::Beard: return "beard";
    case AttributeLabel::NonBeard: return "non_beard";
    case AttributeLabel::Mustache: return "mustache";
    case AttributeLabel::NonMustache: return "non_mustache";
    case AttributeLabel::BaldHead: return "bald_head";
    case AttributeLabel::NonBaldHead: return "non_bald_head";
    }
    return "?";
}

inline std::optional<AttributeLabel> parse_label(std::string_view s)
{
    for (auto a : kAllLabels)
        if (to_string(a) == s)
            return a;
    return std::nullopt;
}

// Complementary pairs: (positive, negative).
inline constexpr std::array<std::pair<AttributeLabel, AttributeLabel>, 4> kPairs = {{
    {AttributeLabel::Eyeglass, AttributeLabel::EyesWithoutGlass},
    {AttributeLabel::Beard, AttributeLabel::NonBeard},
    {AttributeLabel::Mustache, AttributeLabel::NonMustache},
    {AttributeLabel::BaldHead, AttributeLabel::NonBaldHead},
}};

inline bool is_negative(AttributeLabel a)
{
    for (auto [pos, neg] : kPairs)
        if (a == neg)
            return true;
    return false;
}

// Region handed to the classifier.
enum class PatchSource { Eye, Head, Beard, Mustache, Person };

inline std::string_view to_string(PatchSource s)
{
    switch (s) {
    case PatchSource::Eye: return "eye";
    case PatchSource::Head: return "head";
    case PatchSource::Beard: return "beard";
    case PatchSource::Mustache: return "mustache";
    case PatchSource::Person: return "person";
    }
    return "?";
}

// Labels each source is allowed to produce.
inline std::array<AttributeLabel, 2> labels_for(PatchSource s)
{
    switch (s) {
    case PatchSource::Eye: return {AttributeLabel::Eyeglass, AttributeLabel::EyesWithoutGlass};
    case PatchSource::Head: return {AttributeLabel::BaldHead, AttributeLabel::NonBaldHead};
    case PatchSource::Beard: return {AttributeLabel::Beard, AttributeLabel::NonBeard};
    case PatchSource::Mustache: return {AttributeLabel::Mustache, AttributeLabel::NonMustache};
    case PatchSource::Person: return {AttributeLabel::Cellphone, AttributeLabel::Gun};
    }
    return {AttributeLabel::Cellphone, AttributeLabel::Gun};
}

class AttributeClassifier {
public:
    virtual ~AttributeClassifier() = default;
    virtual std::vector<AttributeLabel> classify(PatchSource source, const GrayFrame& patch) const = 0;
};

// Content hash of a patch: 64-bit FNV-1a over the width and height (each as
// 4 little-endian bytes) followed by the row-major 8-bit pixels, rendered as
// 16 lowercase hex digits.
inline std::string patch_fingerprint(const GrayFrame& patch)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    for (std::uint32_t v : {static_cast<std::uint32_t>(patch.width()), static_cast<std::uint32_t>(patch.height())})
        for (int i = 0; i < 4; ++i)
            mix(static_cast<std::uint8_t>(v >> (8 * i)));
    for (auto p : patch.pixels())
        mix(p);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Fixture-backed classifier: `patch_fingerprint<TAB>label` lines. A
// fingerprint may carry several labels; unknown fingerprints get none.
class ManifestClassifier : public AttributeClassifier {
public:
    ManifestClassifier() = default;

    explicit ManifestClassifier(std::multimap<std::string, AttributeLabel> entries) : entries_(std::move(entries)) {}

    static ManifestClassifier load(const std::filesystem::path& path)
    {
        std::ifstream in(path);
        if (!in)
            throw InvalidArgument("cannot open attribute manifest " + path.string());
        std::multimap<std::string, AttributeLabel> entries;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (line.empty() || line[0] == '#')
                continue;
            auto tab = line.find('\t');
            auto label = tab == std::string::npos ? std::nullopt : parse_label(line.substr(tab + 1));
            if (!label)
                throw InvalidArgument("attribute manifest line " + std::to_string(lineno) + " is malformed");
            entries.emplace(line.substr(0, tab), *label);
        }
        return ManifestClassifier(std::move(entries));
    }

    void add(const std::string& fingerprint, AttributeLabel label) { entries_.emplace(fingerprint, label); }

    std::vector<AttributeLabel> classify(PatchSource, const GrayFrame& patch) const override
    {
        std::vector<AttributeLabel> out;
        auto [lo, hi] = entries_.equal_range(patch_fingerprint(patch));
        for (auto it = lo; it != hi; ++it)
            out.push_back(it->second);
        return out;
    }

private:
    std::multimap<std::string, AttributeLabel> entries_;
};

inline void check_pairs(const AttributeSet& attrs)
{
    for (auto [pos, neg] : kPairs)
        if (attrs.count(pos) && attrs.count(neg))
            throw AttributeStageError("classifier reported both " + std::string(to_string(pos)) + " and " +
                                      std::string(to_string(neg)));
}

// Face patches in the Reject size band are skipped; either input may be
// absent. Labels a source is not responsible for are ignored. Throws
// AttributeStageError when the classifier fails or a complementary pair
// co-occurs.
inline AttributeSet classify_attributes(const geometry::PatchSet<1>* patches, const GrayFrame* person_crop,
                                        const AttributeClassifier& classifier)
{
    AttributeSet out;
    auto run = [&](PatchSource src, const GrayFrame& img) {
        std::vector<AttributeLabel> labels;
        try {
            labels = classifier.classify(src, img);
        } catch (const AttributeStageError&) {
            throw;
        } catch (const std::exception& e) {
            throw AttributeStageError(std::string("attribute classifier failed on ") + std::string(to_string(src)) +
                                      " patch: " + e.what());
        }
        auto allowed = labels_for(src);
        for (auto l : labels)
            if (l == allowed[0] || l == allowed[1])
                out.insert(l);
    };

    using geometry::PatchKind;
    static constexpr std::pair<PatchKind, PatchSource> kFace[] = {
        {PatchKind::Eye, PatchSource::Eye},
        {PatchKind::Head, PatchSource::Head},
        {PatchKind::Beard, PatchSource::Beard},
        {PatchKind::Mustache, PatchSource::Mustache},
    };
    if (patches)
        for (auto [kind, src] : kFace)
            if (geometry::patch_size_band(patches->rects.get(kind)) != geometry::SizeBand::Reject)
                run(src, patches->get(kind));
    if (person_crop)
        run(PatchSource::Person, *person_crop);
    check_pairs(out);
    return out;
}

inline AttributeSet classify_attributes(const geometry::PatchSet<1>& patches, const GrayFrame* person_crop,
                                        const AttributeClassifier& classifier)
{
    return classify_attributes(&patches, person_crop, classifier);
}

// ---------------------------------------------------------------------------
// Sentences

struct Verdict {
    enum class Kind { Known, Unknown, PersonNoFace };

    Kind kind = Kind::Unknown;
    std::int64_t subject_id = 0;
    std::string name;

    static Verdict known(std::int64_t id, std::string name) { return {Kind::Known, id, std::move(name)}; }
    static Verdict unknown() { return {Kind::Unknown, 0, {}}; }
    static Verdict no_face() { return {Kind::PersonNoFace, 0, {}}; }

    friend bool operator==(const Verdict&, const Verdict&) = default;
};

inline std::string_view to_string(Verdict::Kind k)
{
    switch (k) {
    case Verdict::Kind::Known: return "known";
    case Verdict::Kind::Unknown: return "unknown";
    case Verdict::Kind::PersonNoFace: return "person_no_face";
    }
    return "unknown";
}

struct VisualSummary {
    Verdict verdict;
    std::string location;
    std::vector<AttributeLabel> attributes;  // positive labels, canonical order
    std::string sentence;
};

// Canonical mention order and phrasing for the unknown-person attribute list.
inline constexpr std::array<std::pair<AttributeLabel, std::string_view>, 5> kMentionOrder = {{
    {AttributeLabel::Beard, "beard"},
    {AttributeLabel::Mustache, "mustache"},
    {AttributeLabel::Eyeglass, "eyeglass"},
    {AttributeLabel::BaldHead, "bald head"},
    {AttributeLabel::Gun, "gun"},
}};

inline std::vector<AttributeLabel> positive_attributes(const AttributeSet& attrs)
{
    std::vector<AttributeLabel> out;
    for (auto [label, _] : kMentionOrder)
        if (attrs.count(label))
            out.push_back(label);
    if (attrs.count(AttributeLabel::Cellphone))
        out.push_back(AttributeLabel::Cellphone);
    return out;
}

// Templates:
//   known            "<Name> at <location>[ talking over the phone]"
//   unknown          "An unknown person[ with a/b/c] at the <location>"
//   person, no face  "A person (no face visible) at <location>"
inline VisualSummary compose_summary(const Verdict& verdict, std::string_view location, const AttributeSet& attrs)
{
    if (location.empty())
        throw InvalidArgument("compose_summary: location label must not be empty");
    VisualSummary s{verdict, std::string(location), positive_attributes(attrs), {}};
    switch (verdict.kind) {
    case Verdict::Kind::Known:
        s.sentence = verdict.name + " at " + s.location;
        if (attrs.count(AttributeLabel::Cellphone))
            s.sentence += " talking over the phone";
        break;
    case Verdict::Kind::Unknown: {
        s.sentence = "An unknown person";
        std::string list;
        for (auto [label, phrase] : kMentionOrder)
            if (attrs.count(label)) {
                if (!list.empty())
                    list += '/';
                list += phrase;
            }
        if (!list.empty())
            s.sentence += " with " + list;
        s.sentence += location.starts_with("the ") ? " at " : " at the ";
        s.sentence += s.location;
        break;
    }
    case Verdict::Kind::PersonNoFace:
        s.sentence = "A person (no face visible) at " + s.location;
        break;
    }
    return s;
}

// Human-readable listing of the positive facial attributes, used in alerts.
inline std::string facial_description(const AttributeSet& attrs)
{
    std::string out;
    for (auto [label, phrase] : kMentionOrder) {
        if (label == AttributeLabel::Gun || !attrs.count(label))
            continue;
        if (!out.empty())
            out += ", ";
        out += phrase;
    }
    return out.empty() ? "no distinguishing facial attributes" : out;
}

} // namespace accessguard::summary
