#include "fsl/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "fsl/errors.hpp"

namespace fsl {

namespace {

using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& where) {
    const char* begin = text.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        raise(ErrorCode::parse, where + ": bad number '" + text + "'");
    return v;
}

long parse_long(const std::string& text, const std::string& where) {
    long v = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        raise(ErrorCode::parse, where + ": bad integer '" + text + "'");
    return v;
}

} // namespace

// ---- dataset files ---------------------------------------------------------

void save_dataset(const VectorDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open for writing: " + path);
    out << "fsl-dataset v1\n";
    out << "classes " << data.num_classes << "\n";
    out << "dim " << data.dim() << "\n";
    out << "rows " << data.rows() << "\n";
    for (size_t r = 0; r < data.rows(); ++r) {
        out << data.labels[r];
        for (size_t c = 0; c < data.dim(); ++c) out << ',' << format_double(data.features(r, c));
        out << '\n';
    }
    if (!out) raise(ErrorCode::io, "write failed: " + path);
}

VectorDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::io, "cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) raise(ErrorCode::parse, path + ": empty file");
    if (line.rfind("fsl-dataset ", 0) != 0)
        raise(ErrorCode::parse, path + ": not a dataset file");
    if (line != "fsl-dataset v1")
        raise(ErrorCode::version, path + ": unsupported format '" + line + "'");

    auto header_value = [&](const std::string& key) {
        if (!std::getline(in, line)) raise(ErrorCode::parse, path + ": truncated header");
        if (line.rfind(key + " ", 0) != 0)
            raise(ErrorCode::parse, path + ": expected '" + key + "', got '" + line + "'");
        return parse_long(line.substr(key.size() + 1), path);
    };
    long classes = header_value("classes");
    long dim = header_value("dim");
    long rows = header_value("rows");
    if (classes < 1 || dim < 1 || rows < 1)
        raise(ErrorCode::schema, path + ": classes, dim and rows must be positive");

    Matrix features(static_cast<size_t>(rows), static_cast<size_t>(dim));
    std::vector<int> labels(static_cast<size_t>(rows));
    for (long r = 0; r < rows; ++r) {
        if (!std::getline(in, line))
            raise(ErrorCode::parse, path + ": expected " + std::to_string(rows) +
                                        " data rows, got " + std::to_string(r));
        std::stringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, ','))
            raise(ErrorCode::parse, path + ": empty data row " + std::to_string(r));
        long label = parse_long(cell, path);
        if (label < 0 || label >= classes)
            raise(ErrorCode::schema, path + ": row " + std::to_string(r) + " label " +
                                         std::to_string(label) + " outside 0.." +
                                         std::to_string(classes - 1));
        labels[static_cast<size_t>(r)] = static_cast<int>(label);
        for (long c = 0; c < dim; ++c) {
            if (!std::getline(ss, cell, ','))
                raise(ErrorCode::parse, path + ": row " + std::to_string(r) + " has fewer than " +
                                            std::to_string(dim) + " values");
            features(static_cast<size_t>(r), static_cast<size_t>(c)) = parse_double(cell, path);
        }
        if (std::getline(ss, cell, ','))
            raise(ErrorCode::parse,
                  path + ": row " + std::to_string(r) + " has extra values");
    }
    VectorDataset data = make_dataset(std::move(features), std::move(labels));
    if (data.num_classes != static_cast<int>(classes))
        raise(ErrorCode::schema, path + ": header says " + std::to_string(classes) +
                                     " classes but rows cover " +
                                     std::to_string(data.num_classes));
    return data;
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'F', 'S', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kCkptVersion = 1;

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

struct ByteWriter {
    std::string buf;
    void u8(uint8_t v) { buf.push_back(static_cast<char>(v)); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u64(s.size());
        buf.append(s);
    }
    void matrix(const Matrix& m) {
        u64(m.rows());
        u64(m.cols());
        for (size_t i = 0; i < m.size(); ++i) f64(m.data()[i]);
    }
};

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;
    explicit ByteReader(const std::string& b) : buf(b) {}
    void need(size_t n) {
        if (pos + n > buf.size()) raise(ErrorCode::integrity, "checkpoint truncated");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        uint64_t n = u64();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Matrix matrix() {
        size_t rows = u64();
        size_t cols = u64();
        // Reads raw bits; a matrix of parameters is finite by construction
        // but the finite check would reject a corrupted file, so keep it.
        std::vector<double> data(rows * cols);
        for (auto& v : data) v = f64();
        return Matrix(rows, cols, std::move(data));
    }
};

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    ByteWriter w;
    w.u32(kCkptVersion);
    w.u64(ckpt.seeds.master);
    w.u64(ckpt.seeds.pretrain);
    w.u64(ckpt.seeds.train);
    w.str(ckpt.config_json);

    const Model& m = ckpt.model;
    w.u8(m.head.kind == Similarity::cosine ? 1 : 0);
    w.f64(m.head.temperature);
    w.u8(m.pre_average ? 1 : 0);

    w.u32(static_cast<uint32_t>(m.backbone.dims.size()));
    for (int d : m.backbone.dims) w.u32(static_cast<uint32_t>(d));
    w.u32(static_cast<uint32_t>(m.backbone.weights.size()));
    for (size_t i = 0; i < m.backbone.weights.size(); ++i) {
        w.matrix(m.backbone.weights[i]);
        w.matrix(m.backbone.biases[i]);
    }

    w.u8(static_cast<uint8_t>(m.adaptor.kind));
    w.u64(m.adaptor.dim);
    switch (m.adaptor.kind) {
    case AdaptorKind::identity:
        break;
    case AdaptorKind::bilstm:
        w.u64(std::get<BiLstmParams>(m.adaptor.p).hidden);
        break;
    case AdaptorKind::deepsets: {
        const auto& p = std::get<DeepSetsParams>(m.adaptor.p);
        w.u64(p.hidden);
        w.u8(p.agg == SetAggregator::sum ? 1 : 0);
        break;
    }
    case AdaptorKind::gcn: {
        const auto& p = std::get<GcnParams>(m.adaptor.p);
        w.u64(p.steps);
        w.u64(p.hidden);
        w.u8(p.shared ? 1 : 0);
        break;
    }
    case AdaptorKind::transformer: {
        const auto& p = std::get<TransformerParams>(m.adaptor.p);
        w.u64(p.d_head);
        w.f64(p.dropout);
        w.u64(p.layers.size());
        w.u64(p.layers.empty() ? 0 : p.layers.front().heads.size());
        break;
    }
    }
    for_each_adaptor_param(const_cast<AdaptorParams&>(ckpt.model.adaptor),
                           [&](Matrix& mat) { w.matrix(mat); });

    uint64_t sum = fnv1a(w.buf);
    w.u64(sum);

    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::io, "cannot open for writing: " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) raise(ErrorCode::io, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::io, "cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string file = ss.str();
    if (file.size() < sizeof(kCkptMagic) + 8 ||
        std::memcmp(file.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
        raise(ErrorCode::parse, path + ": not a checkpoint file");
    std::string body = file.substr(sizeof(kCkptMagic), file.size() - sizeof(kCkptMagic) - 8);
    std::string tail = file.substr(file.size() - 8);
    uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<uint64_t>(static_cast<uint8_t>(tail[i])) << (8 * i);
    if (fnv1a(body) != stored) raise(ErrorCode::integrity, path + ": checksum mismatch");

    ByteReader r(body);
    uint32_t version = r.u32();
    if (version != kCkptVersion)
        raise(ErrorCode::version,
              path + ": checkpoint version " + std::to_string(version) + ", expected " +
                  std::to_string(kCkptVersion));

    Checkpoint ckpt;
    ckpt.seeds.master = r.u64();
    ckpt.seeds.pretrain = r.u64();
    ckpt.seeds.train = r.u64();
    ckpt.config_json = r.str();

    Model& m = ckpt.model;
    m.head.kind = r.u8() ? Similarity::cosine : Similarity::neg_sq_euclidean;
    m.head.temperature = r.f64();
    m.pre_average = r.u8() != 0;

    uint32_t n_dims = r.u32();
    m.backbone.dims.resize(n_dims);
    for (auto& d : m.backbone.dims) d = static_cast<int>(r.u32());
    uint32_t n_layers = r.u32();
    for (uint32_t i = 0; i < n_layers; ++i) {
        m.backbone.weights.push_back(r.matrix());
        m.backbone.biases.push_back(r.matrix());
    }

    uint8_t kind = r.u8();
    if (kind > static_cast<uint8_t>(AdaptorKind::transformer))
        raise(ErrorCode::schema, path + ": unknown adaptor kind " + std::to_string(kind));
    m.adaptor.kind = static_cast<AdaptorKind>(kind);
    m.adaptor.dim = r.u64();
    switch (m.adaptor.kind) {
    case AdaptorKind::identity:
        break;
    case AdaptorKind::bilstm: {
        BiLstmParams p;
        p.hidden = r.u64();
        m.adaptor.p = std::move(p);
        break;
    }
    case AdaptorKind::deepsets: {
        DeepSetsParams p;
        p.hidden = r.u64();
        p.agg = r.u8() ? SetAggregator::sum : SetAggregator::max;
        m.adaptor.p = std::move(p);
        break;
    }
    case AdaptorKind::gcn: {
        GcnParams p;
        p.steps = r.u64();
        p.hidden = r.u64();
        p.shared = r.u8() != 0;
        p.w.resize(p.shared ? 1 : p.steps);
        m.adaptor.p = std::move(p);
        break;
    }
    case AdaptorKind::transformer: {
        TransformerParams p;
        p.d_head = r.u64();
        p.dropout = r.f64();
        size_t layers = r.u64();
        size_t heads = r.u64();
        p.layers.resize(layers);
        for (auto& layer : p.layers) layer.heads.resize(heads);
        m.adaptor.p = std::move(p);
        break;
    }
    }
    for_each_adaptor_param(m.adaptor, [&](Matrix& mat) { mat = r.matrix(); });
    if (r.pos != body.size()) raise(ErrorCode::integrity, path + ": trailing bytes");
    return ckpt;
}

// ---- experiment configuration ------------------------------------------------

AdaptorKind adaptor_kind_from_name(const std::string& name) {
    if (name == "identity") return AdaptorKind::identity;
    if (name == "bilstm") return AdaptorKind::bilstm;
    if (name == "deepsets") return AdaptorKind::deepsets;
    if (name == "gcn") return AdaptorKind::gcn;
    if (name == "transformer") return AdaptorKind::transformer;
    raise(ErrorCode::config, "unknown adaptor kind '" + name + "'");
}

Similarity similarity_from_name(const std::string& name) {
    if (name == "euclidean" || name == "neg_sq_euclidean") return Similarity::neg_sq_euclidean;
    if (name == "cosine") return Similarity::cosine;
    raise(ErrorCode::config, "unknown similarity '" + name + "'");
}

double default_temperature(Similarity s) {
    return s == Similarity::cosine ? 1.0 : 1.0 / 64.0;
}

namespace {

json config_json_tree(const ExperimentConfig& c) {
    json j;
    j["data"] = {{"classes", c.data.classes},     {"per_class", c.data.per_class},
                 {"dim", c.data.dim},             {"spread", c.data.spread},
                 {"separation", c.data.separation}, {"seed", c.data.seed}};
    j["split"] = {{"seen_frac", c.split.seen_frac},
                  {"val_frac", c.split.val_frac},
                  {"seed", c.split.seed}};
    j["backbone"] = {{"hidden", c.backbone.hidden}, {"embed_dim", c.backbone.embed_dim}};
    j["adaptor"] = {{"kind", adaptor_kind_name(c.adaptor.kind)},
                    {"heads", c.adaptor.heads},
                    {"layers", c.adaptor.layers},
                    {"d_head", c.adaptor.d_head},
                    {"dropout", c.adaptor.dropout},
                    {"gcn_steps", c.adaptor.gcn_steps},
                    {"gcn_hidden", c.adaptor.gcn_hidden},
                    {"gcn_shared", c.adaptor.gcn_shared},
                    {"deepsets_hidden", c.adaptor.deepsets_hidden},
                    {"deepsets_agg", c.adaptor.deepsets_agg == SetAggregator::sum ? "sum" : "max"},
                    {"bilstm_hidden", c.adaptor.bilstm_hidden}};
    j["head"] = {{"similarity",
                  c.head.similarity == Similarity::cosine ? "cosine" : "euclidean"},
                 {"temperature", c.head.temperature}};
    j["pretrain"] = {{"epochs", c.pretrain.epochs},
                     {"batch_size", c.pretrain.batch_size},
                     {"learning_rate", c.pretrain.learning_rate},
                     {"val_tasks", c.pretrain.val_tasks},
                     {"seed", c.pretrain.seed}};
    j["train"] = {{"n_way", c.train.n_way},
                  {"m_shot", c.train.m_shot},
                  {"q_queries", c.train.q_queries},
                  {"lambda", c.train.lambda},
                  {"epochs", c.train.epochs},
                  {"episodes_per_epoch", c.train.episodes_per_epoch},
                  {"optimizer", c.train.optimizer},
                  {"learning_rate", c.train.learning_rate},
                  {"momentum", c.train.momentum},
                  {"weight_decay", c.train.weight_decay},
                  {"nesterov", c.train.nesterov},
                  {"backbone_lr_scale", c.train.backbone_lr_scale},
                  {"lr_decay_every", c.train.lr_decay_every},
                  {"lr_decay_factor", c.train.lr_decay_factor},
                  {"val_tasks", c.train.val_tasks},
                  {"pre_average", c.train.pre_average},
                  {"seed", c.train.seed}};
    j["eval"] = {{"n_way", c.eval.n_way},
                 {"m_shot", c.eval.m_shot},
                 {"q_queries", c.eval.q_queries},
                 {"tasks", c.eval.tasks},
                 {"threads", c.eval.threads},
                 {"adapt", c.eval.adapt},
                 {"ways", c.eval.ways},
                 {"transductive", c.eval.transductive},
                 {"seed", c.eval.seed}};
    j["generalized"] = {{"holdout_per_class", c.generalized.holdout_per_class},
                        {"proto_per_class", c.generalized.proto_per_class},
                        {"seen_queries", c.generalized.seen_queries},
                        {"tasks", c.generalized.tasks},
                        {"calibration", c.generalized.calibration},
                        {"search_calibration", c.generalized.search_calibration},
                        {"grid", c.generalized.grid},
                        {"seed", c.generalized.seed}};
    return j;
}

// Field descriptions keyed by dotted path. Every key in the JSON tree must
// appear here; config_schema() and the CLI help read from it.
const std::map<std::string, std::string>& field_docs() {
    static const std::map<std::string, std::string> docs = {
        {"data.classes", "number of synthetic classes"},
        {"data.per_class", "rows generated per class"},
        {"data.dim", "feature dimension of generated data"},
        {"data.spread", "within-class gaussian stddev"},
        {"data.separation", "half-width of the class-mean cube"},
        {"data.seed", "generator seed"},
        {"split.seen_frac", "fraction of classes used for training"},
        {"split.val_frac", "fraction of classes used for validation"},
        {"split.seed", "class shuffle seed"},
        {"backbone.hidden", "hidden layer widths, e.g. [64,64]"},
        {"backbone.embed_dim", "embedding dimension, 0 keeps inputs as-is"},
        {"adaptor.kind", "identity | bilstm | deepsets | gcn | transformer"},
        {"adaptor.heads", "transformer attention heads"},
        {"adaptor.layers", "transformer layers"},
        {"adaptor.d_head", "per-head width, 0 = embed_dim"},
        {"adaptor.dropout", "transformer dropout rate during training"},
        {"adaptor.gcn_steps", "propagation steps"},
        {"adaptor.gcn_hidden", "gcn step width, 0 = 4*embed_dim"},
        {"adaptor.gcn_shared", "share one weight matrix across steps"},
        {"adaptor.deepsets_hidden", "deepsets mlp width, 0 = 4*embed_dim"},
        {"adaptor.deepsets_agg", "max | sum"},
        {"adaptor.bilstm_hidden", "bilstm hidden size, 0 = embed_dim"},
        {"head.similarity", "euclidean | cosine"},
        {"head.temperature", "logit scale, 0 picks the similarity default"},
        {"pretrain.epochs", "classifier pretraining epochs"},
        {"pretrain.batch_size", "pretraining minibatch size"},
        {"pretrain.learning_rate", "pretraining adam learning rate"},
        {"pretrain.val_tasks", "validation tasks per epoch"},
        {"pretrain.seed", "pretraining seed"},
        {"train.n_way", "classes per training episode"},
        {"train.m_shot", "support rows per class"},
        {"train.q_queries", "query rows per class"},
        {"train.lambda", "contrastive regularizer weight"},
        {"train.epochs", "episodic training epochs"},
        {"train.episodes_per_epoch", "episodes per epoch"},
        {"train.optimizer", "adam | sgd"},
        {"train.learning_rate", "initial learning rate"},
        {"train.momentum", "sgd momentum"},
        {"train.weight_decay", "sgd l2 weight decay"},
        {"train.nesterov", "use nesterov momentum"},
        {"train.backbone_lr_scale", "backbone learning-rate multiplier"},
        {"train.lr_decay_every", "epochs between step decays, 0 disables"},
        {"train.lr_decay_factor", "multiplier applied at each decay"},
        {"train.val_tasks", "validation tasks per epoch"},
        {"train.pre_average", "adapt prototypes instead of instances"},
        {"train.seed", "episode sampling seed"},
        {"eval.n_way", "classes per evaluation task"},
        {"eval.m_shot", "support rows per class"},
        {"eval.q_queries", "query rows per class"},
        {"eval.tasks", "number of evaluation tasks"},
        {"eval.threads", "worker threads, results do not depend on this"},
        {"eval.adapt", "apply the set adaptor at evaluation"},
        {"eval.ways", "way counts for eval-ways, e.g. [5,10,15,20]"},
        {"eval.transductive", "refine | adapt-only"},
        {"eval.seed", "task sampling seed"},
        {"generalized.holdout_per_class", "seen rows reserved before training"},
        {"generalized.proto_per_class", "held-out rows per seen prototype, 0 = half"},
        {"generalized.seen_queries", "seen test rows per task"},
        {"generalized.tasks", "number of generalized tasks"},
        {"generalized.calibration", "subtracted from seen logits"},
        {"generalized.search_calibration", "pick calibration on the val split"},
        {"generalized.grid", "calibration candidates"},
        {"generalized.seed", "task sampling seed"},
    };
    return docs;
}

template <typename T>
void read_field(const json& block, const char* block_name, const char* key, T& out) {
    if (!block.contains(key)) return;
    try {
        out = block.at(key).get<T>();
    } catch (const json::exception& e) {
        raise(ErrorCode::schema,
              std::string(block_name) + "." + key + ": " + e.what());
    }
}

void check_known_keys(const json& block, const char* block_name,
                      std::initializer_list<const char*> known) {
    if (!block.is_object())
        raise(ErrorCode::schema, std::string(block_name) + " must be an object");
    for (auto it = block.begin(); it != block.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok)
            raise(ErrorCode::schema,
                  "unknown key " + std::string(block_name) + "." + it.key());
    }
}

ExperimentConfig config_from_json_tree(const json& j) {
    if (!j.is_object()) raise(ErrorCode::schema, "config root must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        static const char* blocks[] = {"data",     "split", "backbone", "adaptor",    "head",
                                       "pretrain", "train", "eval",     "generalized"};
        bool ok = false;
        for (const char* b : blocks) ok = ok || it.key() == b;
        if (!ok) raise(ErrorCode::schema, "unknown config block '" + it.key() + "'");
    }
    ExperimentConfig c;
    if (j.contains("data")) {
        const json& b = j.at("data");
        check_known_keys(b, "data", {"classes", "per_class", "dim", "spread", "separation", "seed"});
        read_field(b, "data", "classes", c.data.classes);
        read_field(b, "data", "per_class", c.data.per_class);
        read_field(b, "data", "dim", c.data.dim);
        read_field(b, "data", "spread", c.data.spread);
        read_field(b, "data", "separation", c.data.separation);
        read_field(b, "data", "seed", c.data.seed);
    }
    if (j.contains("split")) {
        const json& b = j.at("split");
        check_known_keys(b, "split", {"seen_frac", "val_frac", "seed"});
        read_field(b, "split", "seen_frac", c.split.seen_frac);
        read_field(b, "split", "val_frac", c.split.val_frac);
        read_field(b, "split", "seed", c.split.seed);
    }
    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        check_known_keys(b, "backbone", {"hidden", "embed_dim"});
        read_field(b, "backbone", "hidden", c.backbone.hidden);
        read_field(b, "backbone", "embed_dim", c.backbone.embed_dim);
    }
    if (j.contains("adaptor")) {
        const json& b = j.at("adaptor");
        check_known_keys(b, "adaptor",
                         {"kind", "heads", "layers", "d_head", "dropout", "gcn_steps",
                          "gcn_hidden", "gcn_shared", "deepsets_hidden", "deepsets_agg",
                          "bilstm_hidden"});
        std::string kind = adaptor_kind_name(c.adaptor.kind);
        read_field(b, "adaptor", "kind", kind);
        c.adaptor.kind = adaptor_kind_from_name(kind);
        read_field(b, "adaptor", "heads", c.adaptor.heads);
        read_field(b, "adaptor", "layers", c.adaptor.layers);
        read_field(b, "adaptor", "d_head", c.adaptor.d_head);
        read_field(b, "adaptor", "dropout", c.adaptor.dropout);
        read_field(b, "adaptor", "gcn_steps", c.adaptor.gcn_steps);
        read_field(b, "adaptor", "gcn_hidden", c.adaptor.gcn_hidden);
        read_field(b, "adaptor", "gcn_shared", c.adaptor.gcn_shared);
        read_field(b, "adaptor", "deepsets_hidden", c.adaptor.deepsets_hidden);
        std::string agg = c.adaptor.deepsets_agg == SetAggregator::sum ? "sum" : "max";
        read_field(b, "adaptor", "deepsets_agg", agg);
        if (agg == "max") {
            c.adaptor.deepsets_agg = SetAggregator::max;
        } else if (agg == "sum") {
            c.adaptor.deepsets_agg = SetAggregator::sum;
        } else {
            raise(ErrorCode::config, "unknown aggregator '" + agg + "'");
        }
        read_field(b, "adaptor", "bilstm_hidden", c.adaptor.bilstm_hidden);
    }
    if (j.contains("head")) {
        const json& b = j.at("head");
        check_known_keys(b, "head", {"similarity", "temperature"});
        std::string sim = c.head.similarity == Similarity::cosine ? "cosine" : "euclidean";
        read_field(b, "head", "similarity", sim);
        c.head.similarity = similarity_from_name(sim);
        read_field(b, "head", "temperature", c.head.temperature);
    }
    if (j.contains("pretrain")) {
        const json& b = j.at("pretrain");
        check_known_keys(b, "pretrain", {"epochs", "batch_size", "learning_rate", "val_tasks", "seed"});
        read_field(b, "pretrain", "epochs", c.pretrain.epochs);
        read_field(b, "pretrain", "batch_size", c.pretrain.batch_size);
        read_field(b, "pretrain", "learning_rate", c.pretrain.learning_rate);
        read_field(b, "pretrain", "val_tasks", c.pretrain.val_tasks);
        read_field(b, "pretrain", "seed", c.pretrain.seed);
    }
    if (j.contains("train")) {
        const json& b = j.at("train");
        check_known_keys(b, "train",
                         {"n_way", "m_shot", "q_queries", "lambda", "epochs",
                          "episodes_per_epoch", "optimizer", "learning_rate", "momentum",
                          "weight_decay", "nesterov", "backbone_lr_scale", "lr_decay_every",
                          "lr_decay_factor", "val_tasks", "pre_average", "seed"});
        read_field(b, "train", "n_way", c.train.n_way);
        read_field(b, "train", "m_shot", c.train.m_shot);
        read_field(b, "train", "q_queries", c.train.q_queries);
        read_field(b, "train", "lambda", c.train.lambda);
        read_field(b, "train", "epochs", c.train.epochs);
        read_field(b, "train", "episodes_per_epoch", c.train.episodes_per_epoch);
        read_field(b, "train", "optimizer", c.train.optimizer);
        if (c.train.optimizer != "adam" && c.train.optimizer != "sgd")
            raise(ErrorCode::config, "unknown optimizer '" + c.train.optimizer + "'");
        read_field(b, "train", "learning_rate", c.train.learning_rate);
        read_field(b, "train", "momentum", c.train.momentum);
        read_field(b, "train", "weight_decay", c.train.weight_decay);
        read_field(b, "train", "nesterov", c.train.nesterov);
        read_field(b, "train", "backbone_lr_scale", c.train.backbone_lr_scale);
        read_field(b, "train", "lr_decay_every", c.train.lr_decay_every);
        read_field(b, "train", "lr_decay_factor", c.train.lr_decay_factor);
        read_field(b, "train", "val_tasks", c.train.val_tasks);
        read_field(b, "train", "pre_average", c.train.pre_average);
        read_field(b, "train", "seed", c.train.seed);
    }
    if (j.contains("eval")) {
        const json& b = j.at("eval");
        check_known_keys(b, "eval",
                         {"n_way", "m_shot", "q_queries", "tasks", "threads", "adapt", "ways",
                          "transductive", "seed"});
        read_field(b, "eval", "n_way", c.eval.n_way);
        read_field(b, "eval", "m_shot", c.eval.m_shot);
        read_field(b, "eval", "q_queries", c.eval.q_queries);
        read_field(b, "eval", "tasks", c.eval.tasks);
        read_field(b, "eval", "threads", c.eval.threads);
        read_field(b, "eval", "adapt", c.eval.adapt);
        read_field(b, "eval", "ways", c.eval.ways);
        read_field(b, "eval", "transductive", c.eval.transductive);
        if (c.eval.transductive != "refine" && c.eval.transductive != "adapt-only")
            raise(ErrorCode::config, "eval.transductive must be refine or adapt-only");
        read_field(b, "eval", "seed", c.eval.seed);
    }
    if (j.contains("generalized")) {
        const json& b = j.at("generalized");
        check_known_keys(b, "generalized",
                         {"holdout_per_class", "proto_per_class", "seen_queries", "tasks",
                          "calibration", "search_calibration", "grid", "seed"});
        read_field(b, "generalized", "holdout_per_class", c.generalized.holdout_per_class);
        read_field(b, "generalized", "proto_per_class", c.generalized.proto_per_class);
        read_field(b, "generalized", "seen_queries", c.generalized.seen_queries);
        read_field(b, "generalized", "tasks", c.generalized.tasks);
        read_field(b, "generalized", "calibration", c.generalized.calibration);
        read_field(b, "generalized", "search_calibration", c.generalized.search_calibration);
        read_field(b, "generalized", "grid", c.generalized.grid);
        read_field(b, "generalized", "seed", c.generalized.seed);
    }
    return c;
}

} // namespace

ExperimentConfig parse_config_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        raise(ErrorCode::parse, std::string("config: ") + e.what());
    }
    return config_from_json_tree(j);
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::io, "cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    return config_json_tree(cfg).dump(2);
}

void config_set(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (value.empty()) raise(ErrorCode::config, key + ": empty value");
    json tree = config_json_tree(cfg);
    size_t dot = key.find('.');
    if (dot == std::string::npos || !tree.contains(key.substr(0, dot)) ||
        !tree.at(key.substr(0, dot)).contains(key.substr(dot + 1)))
        raise(ErrorCode::config, "unknown config key '" + key + "'");
    json& node = tree.at(key.substr(0, dot)).at(key.substr(dot + 1));
    try {
        if (node.is_boolean()) {
            if (value == "true" || value == "1")
                node = true;
            else if (value == "false" || value == "0")
                node = false;
            else
                raise(ErrorCode::config, key + ": expected a boolean, got '" + value + "'");
        } else if (node.is_number_unsigned()) {
            node = static_cast<uint64_t>(std::stoull(value));
        } else if (node.is_number_integer()) {
            node = static_cast<int64_t>(std::stoll(value));
        } else if (node.is_number_float()) {
            node = parse_double(value, key);
        } else if (node.is_string()) {
            node = value;
        } else if (node.is_array()) {
            json arr = json::parse(value.front() == '[' ? value : "[" + value + "]");
            if (!arr.is_array()) raise(ErrorCode::config, key + ": expected a list");
            node = arr;
        } else {
            raise(ErrorCode::config, key + ": unsupported node type");
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        raise(ErrorCode::config, key + ": cannot parse '" + value + "'");
    }
    cfg = config_from_json_tree(tree);
}

std::string config_get(const ExperimentConfig& cfg, const std::string& key) {
    json tree = config_json_tree(cfg);
    size_t dot = key.find('.');
    if (dot == std::string::npos || !tree.contains(key.substr(0, dot)) ||
        !tree.at(key.substr(0, dot)).contains(key.substr(dot + 1)))
        raise(ErrorCode::config, "unknown config key '" + key + "'");
    const json& node = tree.at(key.substr(0, dot)).at(key.substr(dot + 1));
    return node.is_string() ? node.get<std::string>() : node.dump();
}

std::string config_schema() {
    ExperimentConfig defaults;
    json tree = config_json_tree(defaults);
    std::ostringstream out;
    for (const auto& [key, doc] : field_docs()) {
        size_t dot = key.find('.');
        const json& node = tree.at(key.substr(0, dot)).at(key.substr(dot + 1));
        const char* type = node.is_boolean()          ? "bool"
                           : node.is_number_float()   ? "float"
                           : node.is_number_integer() ? "int"
                           : node.is_number_unsigned() ? "int"
                           : node.is_array()          ? "list"
                                                      : "string";
        out << key << "  " << type << "  "
            << (node.is_string() ? node.get<std::string>() : node.dump()) << "  " << doc << "\n";
    }
    return out.str();
}

} // namespace fsl
