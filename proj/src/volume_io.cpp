#include "mgi/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mgi/errors.hpp"

namespace mgi {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

double parse_double(const std::string& s, const std::string& key) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw DataError("MetaImage header: bad numeric value '" + s + "' for key " + key);
    return value;
}

long parse_long(const std::string& s, const std::string& key) {
    long value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw DataError("MetaImage header: bad integer value '" + s + "' for key " + key);
    return value;
}

bool parse_bool(const std::string& s) { return s == "True" || s == "true" || s == "1"; }

void byteswap16(std::vector<std::int16_t>& v) {
    for (auto& x : v) {
        const auto u = static_cast<std::uint16_t>(x);
        x = static_cast<std::int16_t>(static_cast<std::uint16_t>((u << 8) | (u >> 8)));
    }
}

template <typename Src>
std::vector<std::int16_t> read_raw_as_i16(std::ifstream& raw, std::size_t count,
                                          const std::filesystem::path& path) {
    std::vector<Src> buf(count);
    raw.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(count * sizeof(Src)));
    if (!raw)
        throw DataError("MetaImage raw file truncated: " + path.string());
    std::vector<std::int16_t> out(count);
    std::transform(buf.begin(), buf.end(), out.begin(),
                   [](Src x) { return static_cast<std::int16_t>(x); });
    return out;
}

} // namespace

Volume load_volume(const std::filesystem::path& mhd_path) {
    std::ifstream header(mhd_path);
    if (!header)
        throw DataError("cannot open MetaImage header: " + mhd_path.string());

    long ndims = -1;
    std::array<std::size_t, 3> dims{};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    std::string element_type;
    std::string data_file;
    bool msb = false;
    bool have_dims = false;

    std::string line;
    while (std::getline(header, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("MetaImage header: malformed line '" + line + "' in " +
                            mhd_path.string());
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "NDims") {
            ndims = parse_long(value, key);
        } else if (key == "DimSize") {
            const auto parts = split_ws(value);
            if (parts.size() != 3)
                throw DataError("MetaImage header: DimSize must have 3 entries, got '" +
                                value + "'");
            for (int i = 0; i < 3; ++i) {
                const long d = parse_long(parts[i], key);
                if (d < 1)
                    throw DataError("MetaImage header: DimSize entries must be >= 1, got '" +
                                    value + "'");
                dims[static_cast<std::size_t>(i)] = static_cast<std::size_t>(d);
            }
            have_dims = true;
        } else if (key == "ElementSpacing" || key == "ElementSize") {
            const auto parts = split_ws(value);
            if (parts.size() != 3)
                throw DataError("MetaImage header: " + key + " must have 3 entries");
            for (int i = 0; i < 3; ++i) {
                spacing[static_cast<std::size_t>(i)] = parse_double(parts[i], key);
                if (spacing[static_cast<std::size_t>(i)] <= 0.0)
                    throw DataError("MetaImage header: " + key + " must be positive, got '" +
                                    value + "'");
            }
        } else if (key == "Offset" || key == "Origin" || key == "Position") {
            const auto parts = split_ws(value);
            if (parts.size() != 3)
                throw DataError("MetaImage header: " + key + " must have 3 entries");
            for (int i = 0; i < 3; ++i)
                origin[static_cast<std::size_t>(i)] = parse_double(parts[i], key);
        } else if (key == "ElementType") {
            element_type = value;
        } else if (key == "ElementDataFile") {
            data_file = value;
        } else if (key == "ElementByteOrderMSB" || key == "BinaryDataByteOrderMSB") {
            msb = parse_bool(value);
        } else if (key == "CompressedData") {
            if (parse_bool(value))
                throw DataError("MetaImage header: CompressedData is not supported (" +
                                mhd_path.string() + ")");
        }
        // Remaining keys (ObjectType, TransformMatrix, ...) are ignored.
    }

    if (ndims != 3)
        throw DataError("MetaImage header: NDims must be 3 in " + mhd_path.string());
    if (!have_dims)
        throw DataError("MetaImage header: missing DimSize in " + mhd_path.string());
    if (element_type.empty())
        throw DataError("MetaImage header: missing ElementType in " + mhd_path.string());
    if (data_file.empty())
        throw DataError("MetaImage header: missing ElementDataFile in " + mhd_path.string());
    if (data_file == "LOCAL")
        throw DataError("MetaImage header: ElementDataFile=LOCAL is not supported in " +
                        mhd_path.string());

    const std::filesystem::path raw_path = mhd_path.parent_path() / data_file;
    std::ifstream raw(raw_path, std::ios::binary);
    if (!raw)
        throw DataError("cannot open MetaImage raw file: " + raw_path.string());

    const std::size_t count = dims[0] * dims[1] * dims[2];
    Volume v;
    if (element_type == "MET_SHORT") {
        v.voxels = read_raw_as_i16<std::int16_t>(raw, count, raw_path);
        if (msb) byteswap16(v.voxels);
    } else if (element_type == "MET_UCHAR") {
        v.voxels = read_raw_as_i16<std::uint8_t>(raw, count, raw_path);
    } else if (element_type == "MET_CHAR") {
        v.voxels = read_raw_as_i16<std::int8_t>(raw, count, raw_path);
    } else {
        throw DataError("MetaImage header: ElementType '" + element_type +
                        "' is not supported (" + mhd_path.string() + ")");
    }

    v.series_id = mhd_path.stem().string();
    v.dims = dims;
    v.spacing_mm = spacing;
    v.origin_mm = origin;
    return v;
}

void write_volume(const Volume& v, const std::filesystem::path& mhd_path) {
    const std::filesystem::path raw_path =
        mhd_path.parent_path() / (mhd_path.stem().string() + ".raw");

    std::ofstream header(mhd_path);
    if (!header)
        throw DataError("cannot write MetaImage header: " + mhd_path.string());
    header << "ObjectType = Image\n"
           << "NDims = 3\n"
           << "BinaryData = True\n"
           << "BinaryDataByteOrderMSB = False\n"
           << "CompressedData = False\n"
           << "DimSize = " << v.dims[0] << ' ' << v.dims[1] << ' ' << v.dims[2] << '\n';
    header.precision(17);
    header << "ElementSpacing = " << v.spacing_mm[0] << ' ' << v.spacing_mm[1] << ' '
           << v.spacing_mm[2] << '\n'
           << "Offset = " << v.origin_mm[0] << ' ' << v.origin_mm[1] << ' '
           << v.origin_mm[2] << '\n'
           << "ElementType = MET_SHORT\n"
           << "ElementDataFile = " << raw_path.filename().string() << '\n';
    if (!header)
        throw DataError("failed writing MetaImage header: " + mhd_path.string());
    header.close();

    static_assert(std::endian::native == std::endian::little,
                  "raw writer assumes a little endian host");
    std::ofstream raw(raw_path, std::ios::binary);
    if (!raw)
        throw DataError("cannot write MetaImage raw file: " + raw_path.string());
    raw.write(reinterpret_cast<const char*>(v.voxels.data()),
              static_cast<std::streamsize>(v.voxels.size() * sizeof(std::int16_t)));
    if (!raw)
        throw DataError("failed writing MetaImage raw file: " + raw_path.string());
}

std::vector<Volume> filter_by_thickness(std::vector<Volume> volumes, double max_mm) {
    std::erase_if(volumes,
                  [max_mm](const Volume& v) { return v.slice_thickness_mm() > max_mm; });
    return volumes;
}

Vec3 world_to_voxel(const Volume& v, const Vec3& world_mm) {
    Vec3 out;
    for (std::size_t i = 0; i < 3; ++i)
        out[i] = (world_mm[i] - v.origin_mm[i]) / v.spacing_mm[i];
    return out;
}

Vec3 voxel_to_world(const Volume& v, const Vec3& voxel) {
    Vec3 out;
    for (std::size_t i = 0; i < 3; ++i)
        out[i] = voxel[i] * v.spacing_mm[i] + v.origin_mm[i];
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

} // namespace

std::vector<Candidate> read_candidates_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open candidate CSV: " + path.string());

    std::string line;
    if (!std::getline(in, line))
        throw DataError("candidate CSV is empty: " + path.string());
    const auto header = split_csv_line(trim(line));
    if (header.size() < 4 || header[0] != "seriesuid" || header[1] != "coordX" ||
        header[2] != "coordY" || header[3] != "coordZ")
        throw DataError("candidate CSV: unexpected header '" + trim(line) + "' in " +
                        path.string());
    const bool has_class = header.size() >= 5 && header[4] == "class";

    std::vector<Candidate> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() < (has_class ? 5u : 4u))
            throw DataError("candidate CSV: too few fields at line " +
                            std::to_string(line_no) + " of " + path.string());
        Candidate c;
        c.series_id = fields[0];
        for (int i = 0; i < 3; ++i) {
            c.coord_text[static_cast<std::size_t>(i)] = fields[static_cast<std::size_t>(i) + 1];
            c.world_mm[static_cast<std::size_t>(i)] =
                parse_double(fields[static_cast<std::size_t>(i) + 1], "coord");
        }
        if (has_class) {
            const long cls = parse_long(fields[4], "class");
            if (cls != 0 && cls != 1)
                throw DataError("candidate CSV: class must be 0 or 1 at line " +
                                std::to_string(line_no) + " of " + path.string());
            c.label = cls == 1 ? CandidateLabel::Nodule : CandidateLabel::NonNodule;
        }
        out.push_back(std::move(c));
    }
    return out;
}

void write_candidates_csv(const std::vector<Candidate>& candidates,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write candidate CSV: " + path.string());
    out << "seriesuid,coordX,coordY,coordZ,class\n";
    for (const auto& c : candidates) {
        out << c.series_id;
        for (std::size_t i = 0; i < 3; ++i) {
            if (!c.coord_text[i].empty()) {
                out << ',' << c.coord_text[i];
            } else {
                char buf[32];
                const auto res =
                    std::to_chars(buf, buf + sizeof(buf), c.world_mm[i]);
                out << ',' << std::string_view(buf, res.ptr);
            }
        }
        out << ',' << (c.is_nodule() ? 1 : 0) << '\n';
    }
    if (!out)
        throw DataError("failed writing candidate CSV: " + path.string());
}

} // namespace mgi
