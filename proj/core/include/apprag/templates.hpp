#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace apprag {

/// One loop iteration: `{text}` plus optional extra scalars and nested
/// collections visible inside the loop body.
struct TemplateItem {
    std::string text;
    std::map<std::string, std::string> scalars;
    std::map<std::string, std::vector<TemplateItem>> children;
};

struct RenderContext {
    std::map<std::string, std::string> scalars;
    std::map<std::string, std::vector<TemplateItem>> sections;
};

/// Minimal slot-loop template language:
///   {name}            scalar substitution ({text}, {index} inside loops)
///   {#name}...{/name} loop over a collection
///   {?name}...{/name} body rendered once iff the collection is non-empty
///   {{ and }}         literal braces
/// Rendering is a pure function of (template, context); a collection that
/// loops zero times emits nothing, which is how empty sections disappear
/// instead of leaving dangling headers.
class TemplateEngine {
public:
    void register_template(const std::string& id, const std::string& body);
    bool contains(const std::string& id) const;
    std::vector<std::string> ids() const;

    std::string render(const std::string& id, const RenderContext& context) const;

    /// Loads every `*.tmpl` file in `dir`; the id is the file stem.
    static TemplateEngine load_directory(const std::filesystem::path& dir);

private:
    std::map<std::string, std::string> bodies_;
};

}  // namespace apprag
