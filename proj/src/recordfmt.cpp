#include "emlio/recordfmt.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "emlio/common.hpp"
#include "emlio/crc32c.hpp"
#include "json.hpp"

namespace emlio::recordfmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string shard_file_name(uint32_t shard_id) {
    return "shard_" + std::to_string(shard_id) + ".tfrecord";
}

std::string index_file_name(uint32_t shard_id) {
    return "mapping_shard_" + std::to_string(shard_id) + ".json";
}

void require_keys(const json& obj, std::initializer_list<const char*> keys,
                  const std::string& where) {
    if (!obj.is_object()) {
        throw std::runtime_error(where + ": expected a JSON object");
    }
    for (const char* k : keys) {
        if (!obj.contains(k)) {
            throw std::runtime_error(where + ": missing key '" + k + "'");
        }
    }
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* k : keys) {
            known = known || item.key() == k;
        }
        if (!known) {
            throw std::runtime_error(where + ": unexpected key '" + item.key() + "'");
        }
    }
}

uint64_t get_uint(const json& obj, const char* key, const std::string& where) {
    const json& v = obj.at(key);
    if (!v.is_number_unsigned()) {
        throw std::runtime_error(where + ": '" + key +
                                 "' must be a non-negative integer");
    }
    return v.get<uint64_t>();
}

}  // namespace

ShardIndex write_shard(const std::vector<Sample>& samples, uint32_t shard_id,
                       const fs::path& output_dir) {
    if (samples.empty()) {
        throw std::invalid_argument("write_shard: empty sample list");
    }
    fs::create_directories(output_dir);

    ShardIndex index;
    index.shard_id = shard_id;
    index.shard_file = shard_file_name(shard_id);

    fs::path shard_path = output_dir / index.shard_file;
    std::ofstream out(shard_path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("write_shard: cannot open " + shard_path.string());
    }

    uint64_t offset = 0;
    std::vector<uint8_t> header;
    for (const Sample& s : samples) {
        header.clear();
        put_u64le(header, s.data.size());
        put_u32le(header, crc32c_mask(crc32c(header.data(), 8)));
        out.write(reinterpret_cast<const char*>(header.data()),
                  static_cast<std::streamsize>(header.size()));
        out.write(reinterpret_cast<const char*>(s.data.data()),
                  static_cast<std::streamsize>(s.data.size()));
        uint32_t data_crc = crc32c_mask(crc32c(s.data.data(), s.data.size()));
        std::vector<uint8_t> trailer;
        put_u32le(trailer, data_crc);
        out.write(reinterpret_cast<const char*>(trailer.data()), 4);

        index.entries.push_back({offset, s.data.size(), s.label});
        offset += kRecordOverhead + s.data.size();
    }
    out.flush();
    if (!out) {
        throw std::runtime_error("write_shard: write failed for " +
                                 shard_path.string());
    }
    out.close();

    write_index(index, output_dir);
    return index;
}

void write_index(const ShardIndex& index, const fs::path& dir) {
    json records = json::array();
    for (const RecordEntry& e : index.entries) {
        records.push_back({{"offset", e.offset}, {"size", e.size}, {"label", e.label}});
    }
    json doc = {{"shard_id", index.shard_id},
                {"shard_file", index.shard_file},
                {"records", std::move(records)}};

    fs::path path = dir / index_file_name(index.shard_id);
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("write_index: cannot open " + path.string());
    }
    out << doc.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("write_index: write failed for " + path.string());
    }
}

ShardIndex read_index(const fs::path& index_path) {
    std::ifstream in(index_path);
    if (!in) {
        throw std::runtime_error("read_index: cannot open " + index_path.string());
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error("read_index: " + index_path.string() + ": " +
                                 e.what());
    }
    const std::string where = "read_index: " + index_path.string();
    require_keys(doc, {"shard_id", "shard_file", "records"}, where);

    ShardIndex index;
    index.shard_id = static_cast<uint32_t>(get_uint(doc, "shard_id", where));
    if (!doc.at("shard_file").is_string()) {
        throw std::runtime_error(where + ": 'shard_file' must be a string");
    }
    index.shard_file = doc.at("shard_file").get<std::string>();
    if (!doc.at("records").is_array()) {
        throw std::runtime_error(where + ": 'records' must be an array");
    }
    for (const json& rec : doc.at("records")) {
        require_keys(rec, {"offset", "size", "label"}, where);
        RecordEntry e;
        e.offset = get_uint(rec, "offset", where);
        e.size = get_uint(rec, "size", where);
        e.label = static_cast<uint32_t>(get_uint(rec, "label", where));
        index.entries.push_back(e);
    }

    // Entries must be offset-sorted and non-overlapping; reject, never repair.
    for (size_t i = 1; i < index.entries.size(); ++i) {
        const RecordEntry& prev = index.entries[i - 1];
        const RecordEntry& cur = index.entries[i];
        if (cur.offset < prev.offset + kRecordOverhead + prev.size) {
            throw std::runtime_error(where + ": records out of order or overlapping at index " +
                                     std::to_string(i));
        }
    }
    if (!index.entries.empty()) {
        fs::path shard_path = index_path.parent_path() / index.shard_file;
        std::error_code ec;
        uint64_t file_len = fs::file_size(shard_path, ec);
        if (!ec) {
            const RecordEntry& last = index.entries.back();
            if (last.offset + kRecordOverhead + last.size > file_len) {
                throw std::runtime_error(where + ": entries exceed shard file length");
            }
        }
    }
    return index;
}

std::vector<Sample> read_range(const fs::path& shard_path,
                               std::span<const RecordEntry> entries) {
    if (entries.empty()) {
        return {};
    }
    uint64_t expect = entries.front().offset;
    uint64_t total = 0;
    for (const RecordEntry& e : entries) {
        if (e.offset != expect) {
            throw std::invalid_argument("read_range: entries not contiguous at offset " +
                                        std::to_string(e.offset));
        }
        expect += kRecordOverhead + e.size;
        total += kRecordOverhead + e.size;
    }

    std::ifstream in(shard_path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("read_range: cannot open " + shard_path.string());
    }
    std::vector<uint8_t> buf(total);
    in.seekg(static_cast<std::streamoff>(entries.front().offset));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(total));
    if (static_cast<uint64_t>(in.gcount()) != total) {
        throw std::runtime_error("read_range: short read in " + shard_path.string() +
                                 " at offset " + std::to_string(entries.front().offset));
    }

    std::vector<Sample> out;
    out.reserve(entries.size());
    const uint8_t* p = buf.data();
    for (const RecordEntry& e : entries) {
        uint64_t len = get_u64le(p);
        if (len != e.size) {
            throw CorruptRecordError("read_range: length mismatch at offset " +
                                         std::to_string(e.offset),
                                     e.offset);
        }
        uint32_t len_crc = get_u32le(p + 8);
        if (crc32c_mask(crc32c(p, 8)) != len_crc) {
            throw CorruptRecordError("read_range: length CRC mismatch at offset " +
                                         std::to_string(e.offset),
                                     e.offset);
        }
        uint32_t data_crc = get_u32le(p + 12 + len);
        if (crc32c_mask(crc32c(p + 12, len)) != data_crc) {
            throw CorruptRecordError("read_range: payload CRC mismatch at offset " +
                                         std::to_string(e.offset),
                                     e.offset);
        }
        Sample s;
        s.data.assign(p + 12, p + 12 + len);
        s.label = e.label;
        out.push_back(std::move(s));
        p += kRecordOverhead + len;
    }
    return out;
}

std::vector<ShardIndex> convert_dataset(const fs::path& input_dir,
                                        const fs::path& output_dir,
                                        uint64_t samples_per_shard,
                                        const LabelRule& labeling_rule) {
    if (samples_per_shard == 0) {
        throw std::invalid_argument("convert_dataset: samples_per_shard must be >= 1");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(input_dir)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    if (files.empty()) {
        throw std::runtime_error("convert_dataset: no input files under " +
                                 input_dir.string());
    }
    std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
        return a.lexically_relative(input_dir).generic_string() <
               b.lexically_relative(input_dir).generic_string();
    });

    std::vector<ShardIndex> indexes;
    std::vector<Sample> pending;
    uint32_t shard_id = 0;
    for (const fs::path& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) {
            throw std::runtime_error("convert_dataset: cannot read " + f.string());
        }
        Sample s;
        s.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        if (in.bad()) {
            throw std::runtime_error("convert_dataset: read failed for " + f.string());
        }
        fs::path parent = f.parent_path();
        std::string parent_name =
            parent == input_dir ? std::string() : parent.filename().string();
        s.label = labeling_rule(parent_name);
        pending.push_back(std::move(s));
        if (pending.size() == samples_per_shard) {
            indexes.push_back(write_shard(pending, shard_id++, output_dir));
            pending.clear();
        }
    }
    if (!pending.empty()) {
        indexes.push_back(write_shard(pending, shard_id++, output_dir));
    }
    return indexes;
}

LabelRule directory_label_rule(const fs::path& input_dir) {
    std::set<std::string> names;
    for (const auto& entry : fs::recursive_directory_iterator(input_dir)) {
        if (entry.is_regular_file()) {
            fs::path parent = entry.path().parent_path();
            names.insert(parent == input_dir ? std::string()
                                             : parent.filename().string());
        }
    }
    std::map<std::string, uint32_t> ids;
    uint32_t next = 0;
    for (const std::string& n : names) {
        ids[n] = next++;
    }
    return [ids](const std::string& parent) {
        auto it = ids.find(parent);
        if (it == ids.end()) {
            throw std::runtime_error("label rule: unknown directory '" + parent + "'");
        }
        return it->second;
    };
}

std::vector<ShardIndex> load_dataset(const fs::path& dir) {
    std::vector<ShardIndex> indexes;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        std::string name = entry.path().filename().string();
        if (name.rfind("mapping_shard_", 0) == 0 &&
            name.size() > 19 && name.substr(name.size() - 5) == ".json") {
            indexes.push_back(read_index(entry.path()));
        }
    }
    if (indexes.empty()) {
        throw std::runtime_error("load_dataset: no mapping_shard_*.json under " +
                                 dir.string());
    }
    std::sort(indexes.begin(), indexes.end(),
              [](const ShardIndex& a, const ShardIndex& b) {
                  return a.shard_id < b.shard_id;
              });
    for (size_t i = 1; i < indexes.size(); ++i) {
        if (indexes[i].shard_id == indexes[i - 1].shard_id) {
            throw std::runtime_error("load_dataset: duplicate shard_id " +
                                     std::to_string(indexes[i].shard_id));
        }
    }
    return indexes;
}

std::vector<uint32_t> build_label_map(const std::vector<ShardIndex>& indexes) {
    std::vector<uint32_t> labels;
    for (const ShardIndex& idx : indexes) {
        for (const RecordEntry& e : idx.entries) {
            labels.push_back(e.label);
        }
    }
    return labels;
}

}  // namespace emlio::recordfmt
