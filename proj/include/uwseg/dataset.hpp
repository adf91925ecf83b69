#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uwseg/errors.hpp"
#include "uwseg/grid.hpp"
#include "uwseg/tensor.hpp"
#include "uwseg/tensor_io.hpp"

namespace uwseg {

// Dataset directory layout:
//   <dir>/manifest.txt          key=value metadata (format, classes, images, ...)
//   <dir>/images/img_NNNNN.uwtn 3-D feature tensors
//   <dir>/masks/mask_NNNNN.pgm  label masks

struct Sample {
    std::string name;  // zero-padded index, shared by image and mask files
    ChwTensor image;
    LabelMask mask;
};

struct Dataset {
    int classes = 0;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

using KeyValueMap = std::map<std::string, std::string>;

inline KeyValueMap read_key_value_file(const std::string& path) {
    std::istringstream in(detail::read_file(path));
    KeyValueMap kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("expected key=value line in " + path + ": '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

inline void write_key_value_file(const KeyValueMap& kv, const std::string& path) {
    std::ostringstream out;
    for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
    detail::write_file(path, out.str());
}

inline std::string sample_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05zu", index);
    return buf;
}

inline std::string image_path(const std::string& dir, const std::string& name) {
    return dir + "/images/img_" + name + ".uwtn";
}

inline std::string mask_path(const std::string& dir, const std::string& name) {
    return dir + "/masks/mask_" + name + ".pgm";
}

inline void write_dataset(const Dataset& ds, const KeyValueMap& extra_meta,
                          const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir + "/images", ec);
    fs::create_directories(dir + "/masks", ec);
    if (ec) throw IoError("cannot create dataset directories under " + dir);

    KeyValueMap kv = extra_meta;
    kv["format"] = "uwseg-dataset-v1";
    kv["classes"] = std::to_string(ds.classes);
    kv["images"] = std::to_string(ds.samples.size());
    write_key_value_file(kv, dir + "/manifest.txt");

    for (const auto& s : ds.samples) {
        write_tensor(s.image, image_path(dir, s.name));
        write_mask_pgm(s.mask, mask_path(dir, s.name));
    }
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const KeyValueMap kv = read_key_value_file(dir + "/manifest.txt");
    auto need = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end())
            throw FormatError("dataset manifest missing key '" + key + "': " + dir);
        return it->second;
    };
    if (need("format") != "uwseg-dataset-v1")
        throw FormatError("unrecognized dataset format in " + dir);

    Dataset ds;
    ds.classes = std::stoi(need("classes"));
    require(ds.classes > 0 && ds.classes < 255, "load_dataset: bad class count in manifest");

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir + "/images")) {
        const std::string fname = entry.path().filename().string();
        if (fname.size() > 9 && fname.rfind("img_", 0) == 0 &&
            fname.substr(fname.size() - 5) == ".uwtn")
            names.push_back(fname.substr(4, fname.size() - 9));
    }
    std::sort(names.begin(), names.end());
    if (names.size() != std::stoul(need("images")))
        throw FormatError("dataset image count does not match manifest: " + dir);

    ds.samples.reserve(names.size());
    for (const auto& name : names) {
        Sample s;
        s.name = name;
        s.image = read_chw(image_path(dir, name));
        s.mask = read_mask_pgm(mask_path(dir, name));
        require(s.image.height() == s.mask.height() && s.image.width() == s.mask.width(),
                "load_dataset: image and mask shapes differ for sample " + name);
        check_labels(s.mask, ds.classes);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace uwseg
