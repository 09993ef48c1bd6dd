# utils/validators.py - проверка значений конфигурации эксперимента

import re
from typing import Optional, Sequence, Tuple

TRUE_VALUES = {"1", "true", "yes", "on"}
FALSE_VALUES = {"0", "false", "no", "off"}


class ExperimentConfigValidator:
    @staticmethod
    def validate_int(raw: str, minimum: int = 0) -> Tuple[bool, Optional[int], str]:
        """Целое число не меньше minimum"""
        if raw is None or not raw.strip():
            return False, None, "Значение не может быть пустым"

        cleaned = raw.strip().replace('_', '')
        if not re.fullmatch(r'[+-]?\d+', cleaned):
            return False, None, f"Ожидалось целое число, получено {raw!r}"

        value = int(cleaned)
        if value < minimum:
            return False, None, f"Значение должно быть не меньше {minimum}"

        return True, value, "OK"

    @staticmethod
    def validate_float(raw: str, positive: bool = False) -> Tuple[bool, Optional[float], str]:
        """Неотрицательное (или строго положительное) конечное число"""
        if raw is None or not raw.strip():
            return False, None, "Значение не может быть пустым"

        try:
            value = float(raw.strip())
        except ValueError:
            return False, None, f"Ожидалось число, получено {raw!r}"

        if value != value or value in (float('inf'), float('-inf')):
            return False, None, "Значение должно быть конечным"

        if positive and value <= 0:
            return False, None, "Значение должно быть положительным"

        if value < 0:
            return False, None, "Значение не может быть отрицательным"

        return True, value, "OK"

    @staticmethod
    def validate_bool(raw: str) -> Tuple[bool, Optional[bool], str]:
        cleaned = (raw or '').strip().lower()
        if cleaned in TRUE_VALUES:
            return True, True, "OK"
        if cleaned in FALSE_VALUES:
            return True, False, "OK"
        return False, None, f"Ожидалось true/false, получено {raw!r}"

    @staticmethod
    def validate_choice(raw: str, choices: Sequence[str]) -> Tuple[bool, Optional[str], str]:
        cleaned = (raw or '').strip().lower()
        if cleaned not in choices:
            return False, None, f"Допустимые значения: {', '.join(choices)}"
        return True, cleaned, "OK"

    @staticmethod
    def validate_device_classes(raw: str) -> Tuple[bool, Optional[Tuple[Tuple[int, ...], ...]], str]:
        """Группы классов через ';', классы в группе через ',' или пробел: 0,1;2,3;4,5,6;7,8,9"""
        if not raw or not raw.strip():
            return False, None, "Назначение классов не может быть пустым"

        groups = []
        seen = set()
        for part in raw.split(';'):
            items = [item for item in re.split(r'[,\s]+', part.strip()) if item]
            if not items:
                return False, None, "Пустая группа классов"
            if not all(item.isdigit() for item in items):
                return False, None, f"Неверная группа классов {part.strip()!r}"
            group = tuple(int(item) for item in items)
            if any(c > 9 for c in group):
                return False, None, "Классы должны быть в диапазоне 0-9"
            if seen & set(group):
                return False, None, f"Классы {sorted(seen & set(group))} встречаются в нескольких группах"
            seen |= set(group)
            groups.append(group)

        missing = set(range(10)) - seen
        if missing:
            return False, None, f"Классы {sorted(missing)} не назначены"

        return True, tuple(groups), "OK"

    @staticmethod
    def validate_alphas(raw: str) -> Tuple[bool, Optional[Tuple[float, ...]], str]:
        """Веса агрегации через ';', неотрицательные, в сумме 1"""
        if not raw or not raw.strip():
            return False, None, "Веса не могут быть пустыми"

        values = []
        for item in raw.split(';'):
            ok, value, message = ExperimentConfigValidator.validate_float(item)
            if not ok:
                return False, None, message
            values.append(value)

        if abs(sum(values) - 1.0) > 1e-6:
            return False, None, f"Сумма весов {sum(values):.8f}, должна быть 1"

        return True, tuple(values), "OK"

    @staticmethod
    def validate_frequency(frequency: int, acquisitions: int) -> Tuple[bool, str]:
        """F должно делить A: каждый раунд потребляет A/F выборок"""
        if frequency <= 0:
            return False, "Частота агрегации должна быть положительной"

        if acquisitions % frequency != 0:
            return False, f"F={frequency} должно делить A={acquisitions}"

        return True, "OK"


class NameValidator:
    @staticmethod
    def validate_run_name(name: Optional[str]) -> str:
        """Имя запуска, пригодное для имени каталога"""
        if not name:
            return "run"

        cleaned = re.sub(r'[^A-Za-z0-9_.-]', '_', name.strip())

        return cleaned[:64] or "run"
