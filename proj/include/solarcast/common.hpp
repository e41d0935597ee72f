#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace solarcast {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : Error { using Error::Error; };            // malformed file header
struct CorruptionError : Error { using Error::Error; };        // payload inconsistent with header
struct DimensionError : Error { using Error::Error; };         // shape / geometry mismatch
struct OutOfDomainError : Error { using Error::Error; };       // point outside grid hull
struct InsufficientDataError : Error { using Error::Error; };  // too few fields / samples / days
struct DataQualityError : Error { using Error::Error; };       // too many missing values
struct PolarConditionError : Error { using Error::Error; };    // no sunrise/sunset crossing
struct EmptyInputError : Error { using Error::Error; };
struct UndefinedIntervalError : Error { using Error::Error; }; // quantile interval needs E >= 2
struct MixedEnsembleError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

// UTC instant with seconds precision.
using UnixTime = std::int64_t;

struct CivilDateTime {
    int year = 1970;
    int month = 1;  // 1..12
    int day = 1;    // 1..31
    int hour = 0;
    int minute = 0;
    int second = 0;
};

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(int year, int month, int day);
void civil_from_days(std::int64_t days, int& year, int& month, int& day);

UnixTime to_unix(const CivilDateTime& c);
CivilDateTime from_unix(UnixTime t);

// Fractional day of year in [0, 366): whole days plus fraction elapsed since
// 00:00 UTC of January 1 of the same year.
double fractional_day_of_year(UnixTime t);
// Fractional hour of day in [0, 24).
double fractional_hour_of_day(UnixTime t);

// "2019-06-15T12:00:00Z"
std::string format_iso(UnixTime t);
// Accepts "YYYY-MM-DDTHH:MM:SSZ", "YYYY-MM-DDTHH:MMZ" and date-only "YYYY-MM-DD".
UnixTime parse_iso(const std::string& s);
// "20190615T1200Z", for file names.
std::string format_compact(UnixTime t);

// Midnight UTC of the day containing t.
UnixTime day_start(UnixTime t);

// Neumaier-compensated accumulator; parallel partials combine via merge().
class KahanSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    void merge(const KahanSum& other) {
        add(other.sum_);
        comp_ += other.comp_;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace solarcast
