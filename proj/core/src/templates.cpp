#include "apprag/templates.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "apprag/errors.hpp"

namespace apprag {

namespace {

struct Node {
    enum class Type { text, scalar, loop, cond };
    Type type = Type::text;
    std::string value;  // literal text, or the placeholder/section name
    std::vector<Node> children;
};

class Parser {
public:
    Parser(const std::string& body, const std::string& id) : body_(body), id_(id) {}

    std::vector<Node> parse() {
        auto nodes = parse_block("");
        if (pos_ != body_.size()) fail("unexpected closing tag");
        return nodes;
    }

private:
    std::vector<Node> parse_block(const std::string& open_name) {
        std::vector<Node> nodes;
        std::string text;
        auto flush = [&] {
            if (!text.empty()) {
                nodes.push_back({Node::Type::text, std::move(text), {}});
                text.clear();
            }
        };
        while (pos_ < body_.size()) {
            const char c = body_[pos_];
            if (c == '{' && pos_ + 1 < body_.size() && body_[pos_ + 1] == '{') {
                text.push_back('{');
                pos_ += 2;
                continue;
            }
            if (c == '}' && pos_ + 1 < body_.size() && body_[pos_ + 1] == '}') {
                text.push_back('}');
                pos_ += 2;
                continue;
            }
            if (c != '{') {
                text.push_back(c);
                ++pos_;
                continue;
            }
            const auto end = body_.find('}', pos_);
            if (end == std::string::npos) fail("unterminated tag");
            std::string tag = body_.substr(pos_ + 1, end - pos_ - 1);
            pos_ = end + 1;
            if (tag.empty()) fail("empty tag");
            if (tag[0] == '/') {
                const std::string name = tag.substr(1);
                if (name != open_name) {
                    fail("closing tag '{/" + name + "}' does not match open section");
                }
                flush();
                closed_ = true;
                return nodes;
            }
            flush();
            if (tag[0] == '#' || tag[0] == '?') {
                Node node;
                node.type = tag[0] == '#' ? Node::Type::loop : Node::Type::cond;
                node.value = tag.substr(1);
                if (node.value.empty()) fail("section tag without a name");
                closed_ = false;
                node.children = parse_block(node.value);
                if (!closed_) fail("section '" + node.value + "' is never closed");
                nodes.push_back(std::move(node));
            } else {
                nodes.push_back({Node::Type::scalar, std::move(tag), {}});
            }
        }
        flush();
        if (!open_name.empty()) fail("section '" + open_name + "' is never closed");
        return nodes;
    }

    [[noreturn]] void fail(const std::string& message) const {
        throw ParseError("template '" + id_ + "': " + message);
    }

    const std::string& body_;
    const std::string& id_;
    std::size_t pos_ = 0;
    bool closed_ = false;
};

struct Frame {
    std::map<std::string, std::string> scalars;
    const std::map<std::string, std::vector<TemplateItem>>* sections = nullptr;
};

const std::string* find_scalar(const std::vector<Frame>& frames, const std::string& name) {
    for (auto it = frames.rbegin(); it != frames.rend(); ++it) {
        auto found = it->scalars.find(name);
        if (found != it->scalars.end()) return &found->second;
    }
    return nullptr;
}

const std::vector<TemplateItem>* find_section(const std::vector<Frame>& frames,
                                              const std::string& name) {
    for (auto it = frames.rbegin(); it != frames.rend(); ++it) {
        if (!it->sections) continue;
        auto found = it->sections->find(name);
        if (found != it->sections->end()) return &found->second;
    }
    return nullptr;
}

void render_nodes(const std::vector<Node>& nodes, std::vector<Frame>& frames, std::string& out,
                  const std::string& id) {
    for (const auto& node : nodes) {
        switch (node.type) {
            case Node::Type::text:
                out += node.value;
                break;
            case Node::Type::scalar: {
                const std::string* value = find_scalar(frames, node.value);
                if (!value) {
                    throw ParseError("template '" + id + "': unknown placeholder '{" +
                                     node.value + "}'");
                }
                out += *value;
                break;
            }
            case Node::Type::cond: {
                const auto* items = find_section(frames, node.value);
                if (!items) {
                    throw ParseError("template '" + id + "': unknown section '{?" + node.value +
                                     "}'");
                }
                if (!items->empty()) render_nodes(node.children, frames, out, id);
                break;
            }
            case Node::Type::loop: {
                const auto* items = find_section(frames, node.value);
                if (!items) {
                    throw ParseError("template '" + id + "': unknown section '{#" + node.value +
                                     "}'");
                }
                for (std::size_t i = 0; i < items->size(); ++i) {
                    Frame frame;
                    frame.scalars = (*items)[i].scalars;
                    frame.scalars["text"] = (*items)[i].text;
                    frame.scalars["index"] = std::to_string(i + 1);
                    frame.sections = &(*items)[i].children;
                    frames.push_back(std::move(frame));
                    render_nodes(node.children, frames, out, id);
                    frames.pop_back();
                }
                break;
            }
        }
    }
}

}  // namespace

void TemplateEngine::register_template(const std::string& id, const std::string& body) {
    // Parse eagerly so malformed templates fail at registration time.
    Parser(body, id).parse();
    bodies_[id] = body;
}

bool TemplateEngine::contains(const std::string& id) const { return bodies_.count(id) != 0; }

std::vector<std::string> TemplateEngine::ids() const {
    std::vector<std::string> out;
    out.reserve(bodies_.size());
    for (const auto& [id, body] : bodies_) out.push_back(id);
    return out;
}

std::string TemplateEngine::render(const std::string& id, const RenderContext& context) const {
    auto it = bodies_.find(id);
    if (it == bodies_.end()) throw UsageError("unknown template id '" + id + "'");
    const auto nodes = Parser(it->second, id).parse();

    std::vector<Frame> frames;
    frames.push_back(Frame{context.scalars, &context.sections});
    std::string out;
    render_nodes(nodes, frames, out, id);
    return out;
}

TemplateEngine TemplateEngine::load_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("template directory not found: " + dir.string());
    }
    TemplateEngine engine;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".tmpl") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path.string());
        std::ostringstream buffer;
        buffer << in.rdbuf();
        engine.register_template(path.stem().string(), buffer.str());
    }
    return engine;
}

}  // namespace apprag
